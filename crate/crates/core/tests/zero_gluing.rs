//! 0-gluing on the default torus: verdicts, linearized sections, pregluing defect, oracle.

use obg_core::flowline::{FlowlineOptions, FrontBack, LeftRight, TorusCatalog};
use obg_core::linear_analysis::LinearizedPath;
use obg_core::obg_zero::{gluing_verdict, s0, shooting_oracle, Asymptotics, GluingProfile, Interval, Pregluing};
use obg_core::MorseSystem;

fn setup() -> (MorseSystem, TorusCatalog) {
    let s = MorseSystem::default_torus();
    let cat = TorusCatalog::build(&s, &FlowlineOptions::default()).unwrap();
    (s, cat)
}

#[test]
fn verdicts_follow_front_back_rule() {
    let (s, cat) = setup();
    let t = GluingProfile::new(10.0, 10.0);
    for m in [FrontBack::Front, FrontBack::Back] {
        for z in [LeftRight::Left, LeftRight::Right] {
            for p in [FrontBack::Front, FrontBack::Back] {
                let v = gluing_verdict(&s, cat.minus(m), cat.zero(z), cat.plus(p), &t, 20.0).unwrap();
                eprintln!("{:?} {:?} {:?}: {:?}", m, z, p, v);
                assert_eq!(v.gluable, m == p);
                if v.gluable {
                    let (a, b) = (v.zero_r0_minus.unwrap(), v.zero_r0_minus_s00.unwrap());
                    assert!((a - b).abs() < 1e-6);
                    assert!((a - 10.0).abs() < 1e-6);
                }
            }
        }
    }
}

#[test]
fn s0_tracks_s00_and_defect_is_localized() {
    let (s, cat) = setup();
    let (um, u0, up) = (cat.minus(FrontBack::Front), cat.zero(LeftRight::Right), cat.plus(FrontBack::Front));
    let sigma = LinearizedPath::new(&s, u0).cokernel_element().unwrap();
    let asy = Asymptotics::new(um, u0, up, &sigma);
    for (r0m, r0p) in [(8.0, 12.0), (10.0, 10.0), (13.0, 11.0)] {
        let prof = GluingProfile::new(r0m, r0p);
        let pre = Pregluing::new(um, u0, up, prof).unwrap();
        let a = s0(&pre, &sigma).unwrap();
        let b = asy.s00(&prof);
        eprintln!("R0 = ({r0m}, {r0p}): s0 = {a:.6e}, s00 = {b:.6e}");
        assert!((a - b).abs() < 1e-6 * b.abs().max(1e-12) + 1e-12);
        let [l, r] = pre.overlaps();
        let (lo, hi) = pre.domain();
        for iv in [Interval { lo, hi: l.lo - 0.01 }, Interval { lo: l.hi + 0.01, hi: r.lo - 0.01 }, Interval { lo: r.hi + 0.01, hi }] {
            let d = pre.defect_sup(&s, iv, 0.05);
            assert!(d < 1e-8, "defect {d} on {iv:?}");
        }
        eprintln!("defects {} {}", pre.defect_sup(&s, l, 0.01), pre.defect_sup(&s, r, 0.01));
    }
}

#[test]
fn oracle_agrees_with_verdict() {
    let (s, cat) = setup();
    let opts = FlowlineOptions::default();
    for (m, p) in [(FrontBack::Front, FrontBack::Front), (FrontBack::Front, FrontBack::Back)] {
        let r = shooting_oracle(&s, cat.minus(m), cat.zero(LeftRight::Right), cat.plus(p), 0.05, &opts).unwrap();
        eprintln!("{m:?}/{p:?}: found {} dists {:?} hits {:?}", r.found, r.passage_distances, &r.hits[..r.hits.len().min(6)]);
        assert_eq!(r.found, m == p);
    }
    let r = shooting_oracle(&s, cat.minus(FrontBack::Front), cat.zero(LeftRight::Right), cat.plus(FrontBack::Back), 10.0, &opts).unwrap();
    assert!(r.found);
}
