//! `run.txt` and manifests.

use std::fs;
use std::path::{Path, PathBuf};

use diffnet_core::{Error, Result};
use sha2::{Digest, Sha256};

use crate::args::{Cli, Command};

pub const RUN_FILE: &str = "run.txt";

impl Command {
    /// Output directory of the run, if it has one.
    pub fn out_dir(&self) -> Option<&Path> {
        match self {
            Command::GenData(a) => Some(&a.out),
            Command::Denoise(a) => Some(&a.out),
            Command::Train(a) => Some(&a.out),
            Command::Inpaint(a) => Some(&a.out),
            Command::GenInpaint(a) => Some(&a.out),
            Command::StabilityCheck(a) => a.out.as_deref(),
            Command::Rerun(a) => Some(&a.out),
        }
    }

    /// The same command writing to `out`.
    pub fn with_out(mut self, out: PathBuf) -> Command {
        match &mut self {
            Command::GenData(a) => a.out = out,
            Command::Denoise(a) => a.out = out,
            Command::Train(a) => a.out = out,
            Command::Inpaint(a) => a.out = out,
            Command::GenInpaint(a) => a.out = out,
            Command::StabilityCheck(a) => a.out = Some(out),
            Command::Rerun(a) => a.out = out,
        }
        self
    }
}

pub fn render_run(cli: &Cli) -> Result<String> {
    let body = toml::to_string(cli).map_err(|e| Error::Parse(format!("cannot serialise run configuration: {e}")))?;
    Ok(format!(
        "# diffnet {} run configuration; replay with `diffnet rerun --run <this file> --out <dir>`\n{body}",
        env!("CARGO_PKG_VERSION")
    ))
}

pub fn parse_run(path: &Path) -> Result<Cli> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Creates the output directory and writes `run.txt` into it.
pub fn write_run(cli: &Cli) -> Result<()> {
    if let Some(dir) = cli.command.out_dir() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RUN_FILE);
        fs::write(&path, render_run(cli)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the configuration with the output directory blanked, so relocated runs agree.
pub fn config_hash(cli: &Cli) -> Result<String> {
    let canonical = Cli {
        threads: cli.threads,
        command: cli.command.clone().with_out(PathBuf::new()),
    };
    Ok(sha256_hex(render_run(&canonical)?.as_bytes()))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// `manifest.txt` in `dir`: seed, configuration hash and one hash per listed file.
pub fn write_manifest(dir: &Path, seed: u64, cli: &Cli, files: &[String]) -> Result<()> {
    let mut out = format!("seed = {seed}\nconfig_sha256 = {}\n", config_hash(cli)?);
    for f in files {
        out += &format!("sha256 {f} = {}\n", file_hash(&dir.join(f))?);
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, out).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    #[test]
    fn run_files_round_trip() {
        for argv in [
            vec!["diffnet", "gen-data", "--out", "d", "--seed", "4"],
            vec!["diffnet", "--threads", "2", "inpaint", "--image", "a.pgm", "--mask", "m.pgm", "--out", "o", "--max-iter", "7"],
            vec!["diffnet", "stability-check", "--kernel=0,-1,1", "--tau", "0.5"],
            vec!["diffnet", "train", "--data", "d", "--out", "o", "--time-dynamic", "--train-size", "20"],
        ] {
            let cli = Cli::try_parse_from(argv).unwrap();
            let text = render_run(&cli).unwrap();
            assert_eq!(toml::from_str::<Cli>(&text).unwrap(), cli);
        }
    }

    #[test]
    fn config_hash_ignores_the_output_directory() {
        let a = Cli::try_parse_from(["diffnet", "gen-data", "--out", "x"]).unwrap();
        let b = Cli::try_parse_from(["diffnet", "gen-data", "--out", "y/z"]).unwrap();
        let c = Cli::try_parse_from(["diffnet", "gen-data", "--out", "x", "--seed", "1"]).unwrap();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_ne!(config_hash(&a).unwrap(), config_hash(&c).unwrap());
    }
}
