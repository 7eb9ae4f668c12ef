// Driving the command line from code.
//
// Parses the same arguments the `phasetop` binary takes, runs `analyze`
// with field dumps and prints the report header.

use clap::Parser;
use phasetop::cli::{execute, Cli};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let config = dir.path().join("spin.json");
    std::fs::write(
        &config,
        r#"{ "model": { "type": "RotorSpin", "two_j": 3 } }"#,
    )?;
    let dumps = dir.path().join("dumps");

    let cli = Cli::try_parse_from([
        "phasetop".as_ref(),
        "analyze".as_ref(),
        "--config".as_ref(),
        config.as_os_str(),
        "--grid".as_ref(),
        "16x32".as_ref(),
        "--dump".as_ref(),
        dumps.as_os_str(),
    ])?;
    let report = execute(&cli.command);
    println!(
        "schema {} / {:?} / exit code {}",
        report.schema_version,
        report.status,
        report.exit_code()
    );
    let json: serde_json::Value = serde_json::from_str(&report.to_json())?;
    for g in json["result"]["groups"].as_array().into_iter().flatten() {
        println!("  bands {} c = {}", g["bands"], g["c_plaquette"]);
    }
    let mut files: Vec<_> = std::fs::read_dir(&dumps)?
        .map(|e| e.map(|e| e.file_name()))
        .collect::<Result<_, _>>()?;
    files.sort();
    println!("dumps: {files:?}");
    assert_eq!(report.exit_code(), 0);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
