//! Prints one PASS/FAIL line per criterion, then fails if any criterion failed.

#[test]
fn acceptance() {
    let results = fcbf_validation::evaluate();
    for c in &results {
        println!("{c}");
    }
    let failed: Vec<usize> = results.iter().filter(|c| !c.outcome.pass).map(|c| c.id).collect();
    assert_eq!(results.len(), 10);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
