use std::time::Instant;

use s2ut_core::gradsuite::{cases, run_suite, TOL};
use s2ut_core::RngStream;

#[test]
fn every_op_and_model_matches_finite_differences() {
    let t = Instant::now();
    let entries = run_suite(7, 3).unwrap();
    for e in &entries {
        println!("{:<28} {:.3e} {}", e.name, e.max_rel_err, if e.pass { "ok" } else { "FAIL" });
    }
    let bad: Vec<_> = entries.iter().filter(|e| !e.pass).map(|e| &e.name).collect();
    assert!(bad.is_empty(), "failing: {bad:?}");
    assert!(entries.iter().all(|e| e.max_rel_err <= TOL && e.instances >= 3));
    assert!(t.elapsed().as_secs() < 120, "suite took {:?}", t.elapsed());
}

#[test]
fn suite_covers_every_model() {
    let names: Vec<&str> = cases().iter().filter(|c| c.model).map(|c| c.name).collect();
    for m in ["transformer_seq2seq", "conformer_block", "contrastive_loss", "ctc_model", "s2ut_assembly"] {
        assert!(names.contains(&m), "{m}");
    }
    assert!(cases().iter().any(|c| c.name == "label_smoothed_nll"));
}

#[test]
fn instances_are_reproducible() {
    for c in cases().iter().take(5) {
        let a = (c.run)(&mut RngStream::new(3)).unwrap();
        let b = (c.run)(&mut RngStream::new(3)).unwrap();
        assert_eq!(a.max_rel_err.to_bits(), b.max_rel_err.to_bits(), "{}", c.name);
        assert!(a.checked > 0);
    }
}
