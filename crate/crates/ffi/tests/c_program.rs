//! Compiles and runs a small C program against the generated header and the
//! static library. Skipped when no C compiler is on the PATH.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "segpf.h"

int main(void) {
    SegpfModel *model = NULL;
    if (segpf_model_new(0.8, 1.0, 1.0, &model) != SEGPF_OK) return 1;
    double ys[10];
    if (segpf_model_simulate(model, 5, 10, NULL, ys) != SEGPF_OK) return 2;
    size_t ks[2] = {100, 100};
    SegpfInit init = {SEGPF_INIT_ESTIMATED, 0.0, 0.0, 2, 100};
    SegpfRun *run = NULL;
    if (segpf_run_new(model, ys, 10, 2, ks, init, 1, &run) != SEGPF_OK) return 3;
    double ll = 0.0, exact = 0.0, est = 0.0, se = 0.0;
    if (segpf_run_log_likelihood(run, SEGPF_FORM_CHAIN, &ll) != SEGPF_OK) return 4;
    if (segpf_kalman_log_likelihood(model, ys, 10, &exact) != SEGPF_OK) return 5;
    if (segpf_run_latent_estimate(run, 4, &est, &se, NULL) != SEGPF_OK) return 6;
    if (segpf_model_new(2.0, 1.0, 1.0, &model) != SEGPF_INVALID_ARGUMENT) return 7;
    if (segpf_last_error() == NULL) return 8;
    printf("%.6f %.6f %.6f %.6f\n", ll, exact, est, se);
    segpf_run_free(run);
    segpf_model_free(model);
    return 0;
}
"#;

fn static_lib() -> Option<PathBuf> {
    // tests/../target/<profile>/deps/<test exe> -> target/<profile>
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?;
    let lib = dir.join("libsegpf_ffi.a");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_and_runs() {
    let Some(lib) = static_lib() else {
        eprintln!("static library not found; skipping");
        return;
    };
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; skipping");
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("main.c");
    let bin = tmp.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let values: Vec<f64> =
        String::from_utf8(out.stdout).unwrap().split_whitespace().map(|v| v.parse().unwrap()).collect();
    assert_eq!(values.len(), 4);
    assert!((values[0] - values[1]).abs() < 2.0);
    assert!(values[3] > 0.0);
}
