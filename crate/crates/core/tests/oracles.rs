mod common;

#[test]
fn graph() {
    println!("{}", common::criterion_graph(60).unwrap());
}

#[test]
fn selector() {
    println!("{}", common::criterion_selector().unwrap());
}

#[test]
fn gradients() {
    println!("{}", common::criterion_gradients().unwrap());
}

#[test]
fn invariants() {
    println!("{}", common::criterion_invariants().unwrap());
}
