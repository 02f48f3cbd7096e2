//! Finite-difference checks of the full network across variants, scales
//! and skip modes.

use csn::cli::cmd_gradcheck;
use csn::model::{EscMode, ModelConfig, Variant};

fn assert_accurate(cfg: ModelConfig) {
    let report = cmd_gradcheck(&cfg, 1, 1e-4).unwrap();
    assert!(report.checked > 100, "{:?}: only {} coordinates", cfg.variant, report.checked);
    assert!(
        report.max_rel_error < 1e-5,
        "{} x{} {}: {:e} at {:?}",
        cfg.variant,
        cfg.scale,
        cfg.esc,
        report.max_rel_error,
        report.worst
    );
}

#[test]
fn every_variant() {
    for variant in Variant::ALL {
        assert_accurate(ModelConfig { variant, ..ModelConfig::default() });
    }
}

#[test]
fn larger_scales_and_skip_modes() {
    assert_accurate(ModelConfig { scale: 3, esc: EscMode::Nearest, ..ModelConfig::default() });
    assert_accurate(ModelConfig { scale: 4, esc: EscMode::None, ..ModelConfig::default() });
    assert_accurate(ModelConfig { esc: EscMode::Bilinear, residual_scale: 0.5, ..ModelConfig::default() });
}
