mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synergy_core::*;

const Z95: f64 = 1.959_963_984_540_054;

#[test]
fn independent_example_matches_root_finder() {
    let x = SampleSummary::new(50, 1.2, 0.5).unwrap();
    let y = SampleSummary::new(50, 1.0, 0.5).unwrap();
    let ci = ratio_ci(&x, &y, CiMethod::Fieller, Design::Independent, 0.95).unwrap();
    let (lo, hi) = common::fieller_grid_oracle(1.2, 1.0, 0.005, 0.005, 0.0, Z95, 0.0, 5.0, 1e-5).unwrap();
    assert!((ci.lower - lo).abs() < 1e-10, "{} vs {lo}", ci.lower);
    assert!((ci.upper - hi).abs() < 1e-10, "{} vs {hi}", ci.upper);
    // Frozen from the oracle above.
    assert!((lo - 1.003_645_977_257).abs() < 1e-9, "{lo}");
    assert!((hi - 1.443_354_276_284).abs() < 1e-9, "{hi}");
}

#[test]
fn random_inputs_match_grid_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(2023);
    let mut checked = 0;
    while checked < 100 {
        let n = rng.random_range(5..120usize);
        let mx = rng.random_range(0.3..3.0);
        let my = rng.random_range(0.3..3.0);
        let sx = rng.random_range(0.0..1.5);
        let sy = rng.random_range(0.0..1.5);
        let paired = rng.random_bool(0.5);
        let r = rng.random_range(-0.95..0.95);
        let design = if paired { Design::Paired { r } } else { Design::Independent };
        let (vx, vy) = (sx * sx / n as f64, sy * sy / n as f64);
        let c = if paired { r * sx * sy / n as f64 } else { 0.0 };
        let Some((lo, hi)) = common::fieller_grid_oracle(mx, my, vx, vy, c, Z95, 0.0, 5.0, 1e-4) else {
            continue;
        };
        let x = SampleSummary::new(n, mx, sx).unwrap();
        let y = SampleSummary::new(n, my, sy).unwrap();
        let ci = ratio_ci(&x, &y, CiMethod::Fieller, design, 0.95).unwrap();
        assert!((ci.lower - lo).abs() < 1e-4 && (ci.upper - hi).abs() < 1e-4, "{ci:?} vs ({lo}, {hi})");
        checked += 1;
    }
}

#[test]
fn unbounded_when_denominator_is_imprecise() {
    let x = SampleSummary::new(4, 1.0, 1.0).unwrap();
    let y = SampleSummary::new(4, 0.5, 2.0).unwrap();
    assert_eq!(ratio_ci(&x, &y, CiMethod::Fieller, Design::Independent, 0.95), Err(SynergyError::UnboundedInterval));
}
