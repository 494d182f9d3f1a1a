//! Runs the ten acceptance criteria and prints one line per criterion.
//! Exits non-zero when a criterion fails that is not listed as unattainable.

use fblab_core::acceptance::{run_all, KNOWN_UNATTAINABLE};

fn main() {
    let results = run_all();
    for r in &results {
        println!("{r}");
    }
    let passed = results.iter().filter(|r| r.pass).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    let unexpected: Vec<u32> = results.iter().filter(|r| !r.pass && !KNOWN_UNATTAINABLE.contains(&r.id)).map(|r| r.id).collect();
    for r in results.iter().filter(|r| !r.pass && KNOWN_UNATTAINABLE.contains(&r.id)) {
        println!("note: criterion {} fails as documented (unattainable as stated)", r.id);
    }
    if !unexpected.is_empty() {
        eprintln!("acceptance: unexpected failures {unexpected:?}");
        std::process::exit(1);
    }
}
