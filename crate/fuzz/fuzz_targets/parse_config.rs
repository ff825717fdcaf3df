#![no_main]

use hbrick_cli::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

// First line is an override, the rest is the config file.
fuzz_target!(|text: &str| {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    if let Ok(cfg) = ExperimentConfig::parse(rest, &[first.to_string()]) {
        let _ = cfg.validate();
        let back = ExperimentConfig::parse(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back.to_toml(), cfg.to_toml());
    }
});
