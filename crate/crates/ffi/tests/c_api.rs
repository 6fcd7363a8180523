//! Compiles and runs a small C program against the generated header and the static library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "mdpde.h"

int main(void) {
    const double B[4] = {-0.6, -0.2, 0.1, -0.4}, b[2] = {2.0, 1.0}, S[4] = {1.0, 0.5, 0.5, 0.7}, x0[2] = {0, 0};
    MdpdePath *path = NULL;
    MdpdeFit *fit = NULL;
    if (mdpde_path_simulate(B, b, S, x0, 2, 500, 0.0327, 9, &path) != MDPDE_STATUS_OK) return 10;
    if (mdpde_fit(path, 0.5, 0, 0.0, false, &fit) != MDPDE_STATUS_OK) return 11;
    if (!mdpde_fit_converged(fit)) return 12;
    double sigma[4];
    if (mdpde_fit_params(fit, NULL, NULL, sigma) != MDPDE_STATUS_OK) return 13;
    if (sigma[1] != sigma[2]) return 14;
    char *json = NULL;
    if (mdpde_fit_to_json(fit, &json) != MDPDE_STATUS_OK) return 15;
    mdpde_string_free(json);
    if (mdpde_fit(NULL, 0.5, 0, 0.0, false, &fit) != MDPDE_STATUS_NULL_POINTER) return 16;
    if (mdpde_last_error_message() == NULL) return 17;
    mdpde_fit_free(fit);
    mdpde_path_free(path);
    printf("ok %s\n", mdpde_version());
    return 0;
}
"#;

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_is_current() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/mdpde.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in [
        "mdpde_path_simulate",
        "mdpde_fit",
        "mdpde_wald",
        "mdpde_string_free",
        "MDPDE_STATUS_NUMERICAL",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
}

#[test]
fn c_program_links_and_runs() {
    let lib = target_dir().join("libmdpde_ffi.a");
    assert!(
        lib.exists(),
        "static library not built at {}",
        lib.display()
    );
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror"])
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .output()
        .expect("C compiler");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = Command::new(&exe).output().unwrap();
    assert_eq!(
        run.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok "));
}
