/// Row layout of a batch of variable-length sequences stored back to back.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    offsets: Vec<usize>,
}

impl Layout {
    pub fn from_lengths<I: IntoIterator<Item = usize>>(lengths: I) -> Self {
        let mut offsets = vec![0];
        for n in lengths {
            let last = *offsets.last().unwrap();
            offsets.push(last + n);
        }
        Self { offsets }
    }

    pub fn single(n: usize) -> Self {
        Self::from_lengths([n])
    }

    pub fn num_segments(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn offset(&self, seg: usize) -> usize {
        self.offsets[seg]
    }

    pub fn len_of(&self, seg: usize) -> usize {
        self.offsets[seg + 1] - self.offsets[seg]
    }

    pub fn range(&self, seg: usize) -> std::ops::Range<usize> {
        self.offsets[seg]..self.offsets[seg + 1]
    }

    pub fn lengths(&self) -> Vec<usize> {
        (0..self.num_segments()).map(|s| self.len_of(s)).collect()
    }

    pub fn max_len(&self) -> usize {
        (0..self.num_segments()).map(|s| self.len_of(s)).max().unwrap_or(0)
    }

    /// Segment index of every row.
    pub fn segment_ids(&self) -> Vec<usize> {
        let mut ids = Vec::with_capacity(self.total());
        for s in 0..self.num_segments() {
            ids.extend(std::iter::repeat(s).take(self.len_of(s)));
        }
        ids
    }

    /// Row index of the last element of every segment. Panics on empty segments.
    pub fn last_rows(&self) -> Vec<usize> {
        (0..self.num_segments())
            .map(|s| {
                assert!(self.len_of(s) > 0, "empty segment {s}");
                self.offsets[s + 1] - 1
            })
            .collect()
    }
}
