//! The mod-2 Morse complex of the torus from t-gluable broken flowlines, against a direct
//! count in the perturbed field.

use obg_core::complex::*;
use obg_core::flowline::{FlowlineOptions, TorusCatalog};
use obg_core::obg_t::{torus_perturbations, PerturbedSystem, TSide};
use obg_core::{MorseSystem, ObgError};

fn setup() -> (MorseSystem, TorusCatalog) {
    let s = MorseSystem::default_torus();
    let cat = TorusCatalog::build(&s, &FlowlineOptions::default()).unwrap();
    (s, cat)
}

#[test]
fn torus_complex_has_torus_homology_on_both_sides() {
    let (s, cat) = setup();
    let opts = FlowlineOptions::default();
    for amps in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        let perts = torus_perturbations(&s, &cat, 0.3, amps).unwrap();
        for side in [TSide::Positive, TSide::Negative] {
            let c = build_complex(&s, &cat, &perts, side, 4, &opts, None).unwrap();
            eprintln!("{amps:?} {side:?}: {:?}", c.differentials);
            c.check_d_squared().unwrap();
            assert_eq!(homology_ranks(&c).unwrap(), TORUS_RANKS);
            assert_eq!(c.counted(cat.max, cat.x0), 2);
            assert_eq!(c.counted(cat.x1, cat.min), 2);
            assert_eq!(c.counted(cat.max, cat.x1), 2);
            assert_eq!(c.counted(cat.x0, cat.min), 2);
            let items: usize = c.provenance.values().map(|v| v.len()).sum();
            assert_eq!(items, 4 + 8);
        }
    }
}

#[test]
fn tampered_verdict_breaks_homology() {
    let (s, cat) = setup();
    let perts = torus_perturbations(&s, &cat, 0.3, (1.0, 1.0)).unwrap();
    let c = build_complex(&s, &cat, &perts, TSide::Positive, 4, &FlowlineOptions::default(), Some(0)).unwrap();
    let e = expect_ranks(&c, &TORUS_RANKS).unwrap_err();
    eprintln!("{e}");
    assert!(matches!(e, ObgError::HomologyMismatch { .. }));
    assert_eq!(e.exit_code(), 5);
}

#[test]
fn direct_count_in_the_perturbed_field_agrees() {
    let (s, cat) = setup();
    let opts = FlowlineOptions::default();
    for amps in [(1.0, 1.0), (1.0, -1.0)] {
        let perts = torus_perturbations(&s, &cat, 0.3, amps).unwrap();
        for t in [-0.01, 0.01] {
            let p = PerturbedSystem::new(&s, perts.to_vec(), t);
            let c = morse_smale_complex(&p, &opts).unwrap();
            eprintln!("{amps:?} t = {t}: {:?}", c.provenance);
            assert_eq!(homology_ranks(&c).unwrap(), TORUS_RANKS);
        }
    }
}

#[test]
fn d_squared_violation_is_reported() {
    let (s, _) = setup();
    let c = morse_smale_complex(&s, &FlowlineOptions::default()).unwrap();
    let mut bad = c.clone();
    bad.differentials[0].entries = vec![vec![1, 1]];
    bad.differentials[1].entries = vec![vec![1], vec![0]];
    assert!(matches!(homology_ranks(&bad), Err(ObgError::DSquaredNonzero { .. })));
}
