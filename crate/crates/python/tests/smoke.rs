use std::path::PathBuf;
use std::process::Command;

/// Loads the built extension in a real interpreter. Skips when either the
/// library or python3 is missing.
#[test]
fn python_smoke_script() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..");
    let target = std::env::var_os("CARGO_TARGET_DIR").map(PathBuf::from).unwrap_or_else(|| root.join("target"));
    let lib = target.join("debug").join("libvoxtone_py.so");
    if !lib.exists() {
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    if Command::new("python3").arg("--version").output().is_err() {
        eprintln!("skipping: no python3");
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    std::fs::copy(&lib, tmp.path().join("voxtone_py.so")).unwrap();
    let out = Command::new("python3")
        .arg(root.join("python/smoke_test.py"))
        .env("PYTHONPATH", tmp.path())
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("smoke test: ok"));
}
