//! Interaction log ingestion, sequence construction, leave-one-out splits and
//! synthetic noise injection.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: u64,
    pub rating: Option<f64>,
}

/// Parsed log plus the number of lines that could not be parsed.
#[derive(Clone, Debug, Default)]
pub struct LoadedLog {
    pub records: Vec<InteractionRecord>,
    pub skipped: usize,
}

/// One user's chronological history in dense indices (items start at 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserSequence {
    pub user_index: usize,
    pub items: Vec<usize>,
    /// Ratings aligned with `items`, present when the log carried them.
    pub ratings: Option<Vec<f64>>,
}

impl UserSequence {
    pub fn new(user_index: usize, items: Vec<usize>) -> Self {
        Self { user_index, items, ratings: None }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Raw id ↔ dense index maps. Position 0 holds the padding placeholder.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct IndexMaps {
    pub users: Vec<String>,
    pub items: Vec<String>,
}

impl IndexMaps {
    pub fn user_lookup(&self) -> HashMap<&str, usize> {
        self.users.iter().enumerate().skip(1).map(|(i, s)| (s.as_str(), i)).collect()
    }

    pub fn item_lookup(&self) -> HashMap<&str, usize> {
        self.items.iter().enumerate().skip(1).map(|(i, s)| (s.as_str(), i)).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SequenceDataset {
    pub sequences: Vec<UserSequence>,
    pub maps: IndexMaps,
    pub num_users: usize,
    pub num_items: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceConfig {
    pub min_seq_len: usize,
    pub min_item_freq: usize,
    pub max_len: usize,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self { min_seq_len: 5, min_item_freq: 5, max_len: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitTriplet {
    pub train_prefix: UserSequence,
    pub valid_target: usize,
    pub test_target: usize,
}

impl SplitTriplet {
    /// Input used when predicting the test target (prefix plus validation item).
    pub fn test_input(&self) -> Vec<usize> {
        let mut v = self.train_prefix.items.clone();
        v.push(self.valid_target);
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyDatasetView {
    pub sequences: Vec<UserSequence>,
    /// Per sequence, `true` where the position was synthetically inserted.
    pub injected_mask: Vec<Vec<bool>>,
    /// Users skipped because no unobserved item was available.
    pub skipped_users: Vec<usize>,
}

impl NoisyDatasetView {
    pub fn total_injected(&self) -> usize {
        self.injected_mask.iter().flatten().filter(|&&m| m).count()
    }

    /// Drops the injected positions, recovering the clean sequences.
    pub fn clean(&self) -> Vec<UserSequence> {
        self.sequences
            .iter()
            .zip(&self.injected_mask)
            .map(|(s, mask)| {
                let items = s.items.iter().zip(mask).filter(|(_, &m)| !m).map(|(&i, _)| i).collect();
                UserSequence::new(s.user_index, items)
            })
            .collect()
    }
}

pub fn load_interactions(path: &Path, delimiter: char) -> Result<LoadedLog> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let log = parse_interactions(BufReader::new(file), delimiter).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    if log.skipped > 0 {
        log::warn!("{}: skipped {} malformed lines", path.display(), log.skipped);
    }
    log::info!("{}: loaded {} interactions", path.display(), log.records.len());
    Ok(log)
}

pub fn parse_interactions<In: Read>(input: In, delimiter: char) -> Result<LoadedLog> {
    let mut log = LoadedLog::default();
    for line in BufReader::new(input).lines() {
        let line = line.map_err(|e| Error::io("<input>", e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line, delimiter) {
            Some(r) => log.records.push(r),
            None => log.skipped += 1,
        }
    }
    Ok(log)
}

fn parse_line(line: &str, delimiter: char) -> Option<InteractionRecord> {
    let cols: Vec<&str> = line.split(delimiter).map(str::trim).collect();
    if cols.len() < 3 || cols[0].is_empty() || cols[1].is_empty() {
        return None;
    }
    let timestamp = cols[2].parse::<u64>().ok().or_else(|| {
        // Some exports write integral timestamps as floats.
        let t = cols[2].parse::<f64>().ok()?;
        (t >= 0.0 && t.fract() == 0.0 && t.is_finite()).then_some(t as u64)
    })?;
    let rating = match cols.get(3) {
        Some(r) if !r.is_empty() => Some(r.parse::<f64>().ok().filter(|x| x.is_finite())?),
        _ => None,
    };
    Some(InteractionRecord {
        user_id: cols[0].to_string(),
        item_id: cols[1].to_string(),
        timestamp,
        rating,
    })
}

/// Groups records per user in chronological order, filters infrequent items
/// and short users to a fixed point, and keeps the most recent `max_len` items.
pub fn build_sequences(records: &[InteractionRecord], cfg: &SequenceConfig) -> Result<SequenceDataset> {
    if cfg.min_seq_len < 2 {
        return Err(Error::InvalidArgument(format!("min_seq_len must be at least 2, got {}", cfg.min_seq_len)));
    }
    if cfg.max_len < cfg.min_seq_len {
        return Err(Error::InvalidArgument(format!(
            "max_len {} is below min_seq_len {}",
            cfg.max_len, cfg.min_seq_len
        )));
    }

    // Users in order of first appearance; each history holds record indices.
    let mut user_slot: HashMap<&str, usize> = HashMap::new();
    let mut histories: Vec<(&str, Vec<usize>)> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let slot = *user_slot.entry(r.user_id.as_str()).or_insert_with(|| {
            histories.push((r.user_id.as_str(), Vec::new()));
            histories.len() - 1
        });
        histories[slot].1.push(i);
    }
    for (_, h) in histories.iter_mut() {
        // Stable sort keeps input order among equal timestamps.
        h.sort_by_key(|&i| records[i].timestamp);
    }

    loop {
        let mut changed = false;

        let mut freq: HashMap<&str, usize> = HashMap::new();
        for (_, h) in &histories {
            for &i in h {
                *freq.entry(records[i].item_id.as_str()).or_default() += 1;
            }
        }
        for (_, h) in histories.iter_mut() {
            let before = h.len();
            h.retain(|&i| freq[records[i].item_id.as_str()] >= cfg.min_item_freq);
            changed |= h.len() != before;
        }

        let before = histories.len();
        histories.retain(|(_, h)| h.len() >= cfg.min_seq_len);
        changed |= histories.len() != before;

        for (_, h) in histories.iter_mut() {
            if h.len() > cfg.max_len {
                h.drain(..h.len() - cfg.max_len);
                changed = true;
            }
        }

        if !changed {
            break;
        }
    }

    if histories.is_empty() {
        return Err(Error::EmptyAfterFiltering {
            min_seq_len: cfg.min_seq_len,
            min_item_freq: cfg.min_item_freq,
        });
    }

    // Items are numbered by first appearance in the surviving file rows.
    let mut surviving: Vec<usize> = histories.iter().flat_map(|(_, h)| h.iter().copied()).collect();
    surviving.sort_unstable();
    let mut maps = IndexMaps { users: vec![String::new()], items: vec![String::new()] };
    let mut item_index: HashMap<&str, usize> = HashMap::new();
    for &i in &surviving {
        let id = records[i].item_id.as_str();
        if !item_index.contains_key(id) {
            maps.items.push(id.to_string());
            item_index.insert(id, maps.items.len() - 1);
        }
    }

    let has_ratings = surviving.iter().all(|&i| records[i].rating.is_some());
    let sequences = histories
        .iter()
        .enumerate()
        .map(|(u, (user_id, h))| {
            maps.users.push(user_id.to_string());
            let items = h.iter().map(|&i| item_index[records[i].item_id.as_str()]).collect();
            let ratings = has_ratings.then(|| h.iter().map(|&i| records[i].rating.unwrap()).collect());
            UserSequence { user_index: u + 1, items, ratings }
        })
        .collect::<Vec<_>>();

    let num_items = maps.items.len() - 1;
    let num_users = maps.users.len() - 1;
    log::info!("built {num_users} sequences over {num_items} items");
    Ok(SequenceDataset { sequences, maps, num_users, num_items })
}

/// Leave-one-out split. Sequences shorter than three are excluded; the second
/// element of the result counts them.
pub fn leave_one_out_split(sequences: &[UserSequence]) -> (Vec<SplitTriplet>, usize) {
    let mut out = Vec::with_capacity(sequences.len());
    let mut excluded = 0;
    for s in sequences {
        let n = s.items.len();
        if n < 3 {
            excluded += 1;
            continue;
        }
        out.push(SplitTriplet {
            train_prefix: UserSequence {
                user_index: s.user_index,
                items: s.items[..n - 2].to_vec(),
                ratings: s.ratings.as_ref().map(|r| r[..n - 2].to_vec()),
            },
            valid_target: s.items[n - 2],
            test_target: s.items[n - 1],
        });
    }
    if excluded > 0 {
        log::warn!("leave-one-out: excluded {excluded} sequences shorter than 3");
    }
    (out, excluded)
}

/// Removes positions rated below `threshold`. Sequences without ratings are
/// returned unchanged.
pub fn filter_low_ratings(sequences: &[UserSequence], threshold: f64) -> Vec<UserSequence> {
    sequences
        .iter()
        .map(|s| match &s.ratings {
            None => s.clone(),
            Some(r) => {
                let keep: Vec<usize> = (0..s.items.len()).filter(|&t| r[t] >= threshold).collect();
                UserSequence {
                    user_index: s.user_index,
                    items: keep.iter().map(|&t| s.items[t]).collect(),
                    ratings: Some(keep.iter().map(|&t| r[t]).collect()),
                }
            }
        })
        .collect()
}

/// Inserts `⌈noise_ratio · n⌉` distinct unobserved items at uniform random
/// positions in each sequence. `histories`, when given, lists for each
/// sequence the items the user interacted with beyond the sequence itself.
pub fn inject_noise(
    sequences: &[UserSequence],
    num_items: usize,
    noise_ratio: f64,
    seed: u64,
    histories: Option<&[Vec<usize>]>,
) -> Result<NoisyDatasetView> {
    if !(noise_ratio > 0.0 && noise_ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("noise_ratio must lie in (0, 1], got {noise_ratio}")));
    }
    if let Some(h) = histories {
        if h.len() != sequences.len() {
            return Err(Error::InvalidArgument("one history per sequence is required".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut view = NoisyDatasetView { sequences: Vec::new(), injected_mask: Vec::new(), skipped_users: Vec::new() };
    for (k, s) in sequences.iter().enumerate() {
        let mut seen: HashSet<usize> = s.items.iter().copied().collect();
        if let Some(h) = histories {
            seen.extend(h[k].iter().copied());
        }
        let candidates: Vec<usize> = (1..=num_items).filter(|i| !seen.contains(i)).collect();
        if candidates.is_empty() {
            log::warn!("user {} interacted with every item; not injecting noise", s.user_index);
            view.skipped_users.push(s.user_index);
            view.injected_mask.push(vec![false; s.items.len()]);
            view.sequences.push(UserSequence::new(s.user_index, s.items.clone()));
            continue;
        }
        let want = (noise_ratio * s.items.len() as f64 - 1e-9).ceil().max(0.0) as usize;
        let count = want.min(candidates.len());
        let picks = sample(&mut rng, candidates.len(), count);
        let mut items = s.items.clone();
        let mut mask = vec![false; items.len()];
        for p in picks.iter() {
            let pos = rng.gen_range(0..=items.len());
            items.insert(pos, candidates[p]);
            mask.insert(pos, true);
        }
        view.sequences.push(UserSequence::new(s.user_index, items));
        view.injected_mask.push(mask);
    }
    Ok(view)
}

/// Writes one `user_index<TAB>items` line per sequence.
pub fn write_sequences<W: Write>(mut out: W, sequences: &[UserSequence]) -> std::io::Result<()> {
    for s in sequences {
        let items: Vec<String> = s.items.iter().map(|i| i.to_string()).collect();
        writeln!(out, "{}\t{}", s.user_index, items.join(" "))?;
    }
    Ok(())
}

pub fn read_sequences<In: Read>(input: In) -> Result<Vec<UserSequence>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(input).lines().enumerate() {
        let line = line.map_err(|e| Error::io("<input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::format("sequence file", format!("line {}: {line:?}", n + 1));
        let (user, items) = line.split_once('\t').ok_or_else(bad)?;
        let user = user.parse().map_err(|_| bad())?;
        let items = items
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        out.push(UserSequence::new(user, items));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(u: &str, i: &str, t: u64) -> InteractionRecord {
        InteractionRecord { user_id: u.into(), item_id: i.into(), timestamp: t, rating: None }
    }

    #[test]
    fn parses_tab_and_comma_lines() {
        let log = parse_interactions("u1\ti7\t100\n".as_bytes(), '\t').unwrap();
        assert_eq!(log.records, vec![rec("u1", "i7", 100)]);

        let log = parse_interactions("u1,i7,100,4.0\n".as_bytes(), ',').unwrap();
        assert_eq!(log.records[0].rating, Some(4.0));

        let log = parse_interactions("".as_bytes(), ',').unwrap();
        assert!(log.records.is_empty());
    }

    #[test]
    fn malformed_lines_are_counted() {
        let text = "u1\ti1\t5\nbroken\nu2\ti2\tnot-a-time\n\ti3\t7\nu3\ti3\t9\n";
        let log = parse_interactions(text.as_bytes(), '\t').unwrap();
        assert_eq!(log.records.len(), 2);
        assert_eq!(log.skipped, 3);
    }

    #[test]
    fn missing_file_is_fatal() {
        let e = load_interactions(Path::new("/nonexistent/ratings.tsv"), '\t').unwrap_err();
        assert!(matches!(e, Error::Io { .. }));
    }

    /// Every user interacts with items 0..n_items once, at time t.
    fn dense_log(users: usize, items: usize) -> Vec<InteractionRecord> {
        let mut v = Vec::new();
        for u in 0..users {
            for i in 0..items {
                v.push(rec(&format!("u{u}"), &format!("i{i}"), (i * 10 + u) as u64));
            }
        }
        v
    }

    #[test]
    fn short_users_and_rare_items_are_dropped() {
        let mut log = dense_log(5, 6);
        for i in 0..4 {
            log.push(rec("short", &format!("i{i}"), 1000 + i as u64));
        }
        for u in 0..3 {
            log.push(rec(&format!("u{u}"), "rare", 5000));
        }
        let ds = build_sequences(&log, &SequenceConfig { min_seq_len: 5, min_item_freq: 5, max_len: 50 }).unwrap();
        assert_eq!(ds.num_users, 5);
        assert_eq!(ds.num_items, 6);
        assert!(!ds.maps.users.contains(&"short".to_string()));
        assert!(!ds.maps.items.contains(&"rare".to_string()));
    }

    #[test]
    fn filtering_iterates_to_fixed_point() {
        // Dropping item "x" shortens u5 below the threshold, which in turn
        // drops "y" below the frequency threshold.
        let mut log = dense_log(5, 5);
        for u in 0..3 {
            log.push(rec(&format!("u{u}"), "x", 900));
        }
        for k in 0..3 {
            log.push(rec("u5", &format!("i{k}"), 800 + k as u64));
        }
        log.push(rec("u5", "x", 950));
        for u in 0..4 {
            log.push(rec(&format!("u{u}"), "y", 990));
        }
        log.push(rec("u5", "y", 991));
        let ds = build_sequences(&log, &SequenceConfig::default()).unwrap();
        assert_eq!(ds.num_users, 5);
        assert_eq!(ds.num_items, 5);
    }

    #[test]
    fn sorts_by_timestamp_with_stable_ties() {
        let mut log = Vec::new();
        let order = [("c", 3), ("a", 1), ("b", 1), ("d", 4), ("e", 5)];
        for (i, t) in order {
            log.push(rec("u", i, t));
        }
        let ds = build_sequences(&log, &SequenceConfig { min_seq_len: 5, min_item_freq: 1, max_len: 50 }).unwrap();
        let names: Vec<&str> = ds.sequences[0].items.iter().map(|&i| ds.maps.items[i].as_str()).collect();
        assert_eq!(names, ["a", "b", "c", "d", "e"]);
    }

    #[test]
    fn truncation_keeps_most_recent_suffix() {
        let log: Vec<_> = (0..60).map(|i| rec("u", &format!("i{i}"), i as u64)).collect();
        let ds = build_sequences(&log, &SequenceConfig { min_seq_len: 5, min_item_freq: 1, max_len: 50 }).unwrap();
        let names: Vec<String> = ds.sequences[0].items.iter().map(|&i| ds.maps.items[i].clone()).collect();
        let expect: Vec<String> = (10..60).map(|i| format!("i{i}")).collect();
        assert_eq!(names, expect);
    }

    #[test]
    fn empty_result_names_thresholds() {
        let log = vec![rec("u", "i", 1)];
        let e = build_sequences(&log, &SequenceConfig::default()).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("min_seq_len = 5") && msg.contains("min_item_freq = 5"), "{msg}");
    }

    #[test]
    fn dense_indices_start_at_one() {
        let ds = build_sequences(&dense_log(5, 5), &SequenceConfig::default()).unwrap();
        let all: HashSet<usize> = ds.sequences.iter().flat_map(|s| s.items.iter().copied()).collect();
        assert_eq!(all, (1..=5).collect());
        let users: Vec<usize> = ds.sequences.iter().map(|s| s.user_index).collect();
        assert_eq!(users, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn leave_one_out_examples() {
        let (tr, ex) = leave_one_out_split(&[UserSequence::new(1, vec![1, 2, 3, 4, 5])]);
        assert_eq!(ex, 0);
        assert_eq!(tr[0].train_prefix.items, vec![1, 2, 3]);
        assert_eq!((tr[0].valid_target, tr[0].test_target), (4, 5));

        let (tr, _) = leave_one_out_split(&[UserSequence::new(1, vec![1, 2, 3])]);
        assert_eq!(tr[0].train_prefix.items, vec![1]);

        let (tr, ex) = leave_one_out_split(&[UserSequence::new(1, vec![1, 2])]);
        assert!(tr.is_empty());
        assert_eq!(ex, 1);

        let many: Vec<_> = (1..=100).map(|u| UserSequence::new(u, vec![1, 2, 3, 4, 5])).collect();
        assert_eq!(leave_one_out_split(&many).0.len(), 100);
    }

    #[test]
    fn noise_counts_and_determinism() {
        let seqs = vec![UserSequence::new(1, (1..=10).collect())];
        let v = inject_noise(&seqs, 100, 0.2, 7, None).unwrap();
        assert_eq!(v.sequences[0].len(), 12);
        assert_eq!(v.injected_mask[0].iter().filter(|&&m| m).count(), 2);
        assert_eq!(v, inject_noise(&seqs, 100, 0.2, 7, None).unwrap());
        assert!(inject_noise(&seqs, 100, 0.0, 7, None).is_err());
        assert!(inject_noise(&seqs, 100, 1.5, 7, None).is_err());
    }

    #[test]
    fn saturated_user_is_skipped() {
        let seqs = vec![UserSequence::new(1, vec![1, 2, 3])];
        let v = inject_noise(&seqs, 3, 0.5, 1, None).unwrap();
        assert_eq!(v.skipped_users, vec![1]);
        assert_eq!(v.sequences[0].items, vec![1, 2, 3]);
    }

    #[test]
    fn noise_respects_extra_history() {
        let seqs = vec![UserSequence::new(1, vec![1, 2])];
        let hist = vec![vec![3, 4]];
        for seed in 0..20 {
            let v = inject_noise(&seqs, 5, 0.5, seed, Some(&hist)).unwrap();
            let inserted: Vec<usize> = v.sequences[0]
                .items
                .iter()
                .zip(&v.injected_mask[0])
                .filter(|(_, &m)| m)
                .map(|(&i, _)| i)
                .collect();
            assert_eq!(inserted, vec![5]);
        }
    }

    #[test]
    fn low_rating_filter() {
        let s = UserSequence { user_index: 1, items: vec![1, 2, 3], ratings: Some(vec![4.0, 2.0, 3.0]) };
        let out = filter_low_ratings(&[s], 3.0);
        assert_eq!(out[0].items, vec![1, 3]);
    }

    #[test]
    fn sequence_text_round_trip() {
        let seqs = vec![UserSequence::new(1, vec![3, 1, 2]), UserSequence::new(2, vec![5])];
        let mut buf = Vec::new();
        write_sequences(&mut buf, &seqs).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "1\t3 1 2\n2\t5\n");
        assert_eq!(read_sequences(buf.as_slice()).unwrap(), seqs);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_log() -> impl Strategy<Value = Vec<InteractionRecord>> {
            prop::collection::vec((0u8..12, 0u8..15, 0u64..50), 0..300).prop_map(|rows| {
                rows.into_iter()
                    .map(|(u, i, t)| rec(&format!("u{u}"), &format!("i{i}"), t))
                    .collect()
            })
        }

        proptest! {
            #[test]
            fn fixed_point_holds(log in arb_log(), max_len in 5usize..30) {
                let cfg = SequenceConfig { min_seq_len: 5, min_item_freq: 3, max_len };
                if let Ok(ds) = build_sequences(&log, &cfg) {
                    let mut freq: HashMap<usize, usize> = HashMap::new();
                    for s in &ds.sequences {
                        prop_assert!(s.len() >= 5 && s.len() <= max_len);
                        for &i in &s.items {
                            *freq.entry(i).or_default() += 1;
                        }
                    }
                    prop_assert!(freq.values().all(|&c| c >= 3));
                    prop_assert_eq!(freq.len(), ds.num_items);
                }
            }

            #[test]
            fn noise_round_trip(
                lens in prop::collection::vec(1usize..20, 1..10),
                ratio in 0.01f64..1.0,
                seed in any::<u64>(),
            ) {
                let seqs: Vec<UserSequence> = lens.iter().enumerate()
                    .map(|(u, &n)| UserSequence::new(u + 1, (1..=n).map(|k| (k * 7 + u) % 30 + 1).collect()))
                    .collect();
                let v = inject_noise(&seqs, 60, ratio, seed, None).unwrap();
                for ((s, noisy), mask) in seqs.iter().zip(&v.sequences).zip(&v.injected_mask) {
                    prop_assert_eq!(noisy.len(), mask.len());
                    let k = (ratio * s.len() as f64 - 1e-9).ceil() as usize;
                    prop_assert_eq!(mask.iter().filter(|&&m| m).count(), k);
                    for (item, &m) in noisy.items.iter().zip(mask) {
                        if m {
                            prop_assert!(!s.items.contains(item));
                        }
                    }
                }
                let clean: Vec<Vec<usize>> = v.clean().into_iter().map(|s| s.items).collect();
                let orig: Vec<Vec<usize>> = seqs.into_iter().map(|s| s.items).collect();
                prop_assert_eq!(clean, orig);
            }
        }
    }
}
