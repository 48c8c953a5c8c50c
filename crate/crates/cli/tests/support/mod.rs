//! Running the binary and comparing output trees.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dualdebias")
}

/// Run `dualdebias args...` in `cwd`.
pub fn run_in(cwd: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Run and require exit code 0.
pub fn ok(cwd: &Path, args: &[&str]) -> String {
    let o = run_in(cwd, args);
    assert_eq!(code(&o), 0, "{args:?} failed: {}", stderr(&o));
    stdout(&o)
}

/// Relative path to bytes for every file under `dir`.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let mut entries: Vec<_> = fs::read_dir(dir)
            .expect("readable dir")
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Run `args` (which must write into `out`, relative to `cwd`) twice,
/// clearing `out` in between; true when both runs leave identical bytes.
pub fn deterministic(cwd: &Path, out: &str, args: &[&str]) -> bool {
    let dir = cwd.join(out);
    ok(cwd, args);
    let first = snapshot(&dir);
    fs::remove_dir_all(&dir).unwrap();
    ok(cwd, args);
    let second = snapshot(&dir);
    !first.is_empty() && first == second
}

/// Parse `key=value` lines into a map.
pub fn key_values(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Independent reader for the binary matrix layout: 4-byte magic, u16
/// version, u16 dtype, u64 rows, u64 cols, row-major f64 payload.
pub fn decode(bytes: &[u8]) -> (u16, u16, usize, usize, Vec<f64>) {
    assert_eq!(&bytes[..4], b"DDM1");
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    let dtype = u16::from_le_bytes([bytes[6], bytes[7]]);
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let values = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    (version, dtype, rows, cols, values)
}
