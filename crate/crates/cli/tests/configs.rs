use std::path::PathBuf;

use optlattice_cli::config::{Command, RunConfig};

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn shipped_configs_are_valid() {
    let mut seen = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("ini") {
            continue;
        }
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let command = if name.starts_with("convergence") {
            Command::Convergence
        } else {
            Command::Simulate
        };
        let cfg =
            RunConfig::load(Some(&path), &[], command).unwrap_or_else(|e| panic!("{name}: {e}"));
        let again = RunConfig::parse(Some((&cfg.serialize(), &name)), &[], command).unwrap();
        assert_eq!(again, cfg, "{name}");
        seen += 1;
    }
    assert!(seen >= 6);
}
