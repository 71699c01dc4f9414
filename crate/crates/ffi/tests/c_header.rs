//! Compiles and runs a small C program against the generated header and
//! the static library. Skipped when no C compiler is on PATH.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "spinecho.h"

int main(void) {
    double fom = 0.0;
    if (spinecho_figure_of_merit(380.0, 1.0, &fom) != SPINECHO_STATUS_OK || fom != 380.0) return 10;

    SpinechoSystem *sys = NULL;
    if (spinecho_system_new(1.0, 2.0, 1.0, 0.9, &sys) != SPINECHO_STATUS_INVALID_ARGUMENT) return 11;
    if (spinecho_last_error_message() == NULL) return 12;

    if (spinecho_system_new(0.5, 2.0, 0.0, 0.0, &sys) != SPINECHO_STATUS_OK) return 13;
    SpinechoSpectrum *spec = NULL;
    if (spinecho_spectrum_simulate(sys, 9.7, 0.002, SPINECHO_GRID_SPIRAL, 6, 0.3, 0.4, 101, &spec)
        != SPINECHO_STATUS_OK) return 14;
    size_t n = spinecho_spectrum_len(spec);
    if (n != 101) return 15;
    double field[101], amp[101];
    if (spinecho_spectrum_copy(spec, field, amp, n) != SPINECHO_STATUS_OK) return 16;

    SpinechoFitResult *fit = NULL;
    SpinechoStatus st = spinecho_fit_gaussian_line(field, amp, n, &fit);
    if (st != SPINECHO_STATUS_OK) { fprintf(stderr, "status %d: %s\n", (int)st, spinecho_last_error_message()); return 17; }
    double centre = 0.0, sigma = 0.0;
    if (spinecho_fit_result_param(fit, "center_T", &centre, &sigma) != SPINECHO_STATUS_OK) return 18;
    if (fabs(centre - 9.7 / (2.0 * 13.9962449361)) > 1e-4) return 19;

    char *json = NULL;
    if (spinecho_fit_result_json(fit, &json) != SPINECHO_STATUS_OK) return 20;
    puts(json);
    spinecho_string_free(json);

    spinecho_fit_result_free(fit);
    spinecho_spectrum_free(spec);
    spinecho_system_free(sys);
    return 0;
}
"#;

/// `cargo test` rebuilds the static library next to the test binary in
/// `deps/` without refreshing the copy one level up.
fn static_lib() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().join("libspinecho_ffi.a")
}

#[test]
fn header_compiles_and_links() {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let lib = static_lib();
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();

    let out = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&bin)
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let run = Command::new(&bin).output().unwrap();
    assert_eq!(
        run.status.code(),
        Some(0),
        "{}{}",
        String::from_utf8_lossy(&run.stderr),
        String::from_utf8_lossy(&run.stdout)
    );
    assert!(String::from_utf8_lossy(&run.stdout).contains("gaussian_line"));
}
