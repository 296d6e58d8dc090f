#![no_main]

use flexcast::synth_fleet::parse_fleet_specs;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(specs) = parse_fleet_specs(text) {
        for spec in &specs {
            spec.validate().expect("parsed specs are valid");
        }
    }
});
