#![no_main]

use flexcast::sweep_harness::SweepConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let Ok(config) = SweepConfig::from_toml(text, ".") else { return };
    config.validate().expect("accepted configs stay valid");
    let _ = config.n_cells();
    assert_eq!(config.digest(), config.digest());
});
