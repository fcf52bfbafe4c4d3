use std::path::{Path, PathBuf};
use std::process::Command;

fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn exported_functions() -> Vec<String> {
    let src = std::fs::read_to_string(manifest_dir().join("src/lib.rs")).unwrap();
    src.lines()
        .filter_map(|l| {
            let l = l.trim_start();
            let rest = l.strip_prefix("pub unsafe extern \"C\" fn ").or_else(|| l.strip_prefix("pub extern \"C\" fn "))?;
            Some(rest.split('(').next().unwrap().to_string())
        })
        .collect()
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(manifest_dir().join("include/csed.h")).unwrap();
    let fns = exported_functions();
    assert!(fns.len() >= 14, "{fns:?}");
    for f in &fns {
        assert!(header.contains(&format!("{f}(")), "{f} missing from csed.h");
    }
    for ty in ["typedef struct CsedGraph CsedGraph;", "typedef struct CsedModel CsedModel;", "CSED_STATUS_OK = 0"] {
        assert!(header.contains(ty), "{ty} missing from csed.h");
    }
    assert!(!header.contains("struct CsedGraph {"), "graph handle must stay opaque");
}

const C_PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "csed.h"

int main(void) {
    double a[4] = {0.0, 1.0, 1.0, 0.0};
    CsedGraph *g = NULL;
    if (csed_graph_from_adjacency(a, 2, &g) != CSED_STATUS_OK) return 1;
    double v[2] = {1.0, 3.0};
    double p = 0.0;
    if (csed_graph_penalty(g, v, 2, &p) != CSED_STATUS_OK || fabs(p - 4.0) > 1e-12) return 2;
    csed_graph_free(g);
    double bad[4] = {0.0, 1.0, 0.0, 0.0};
    if (csed_graph_from_adjacency(bad, 2, &g) != CSED_STATUS_INVALID_ARGUMENT) return 3;
    if (csed_last_error() == NULL) return 4;
    printf("%s\n", csed_version());
    return 0;
}
"#;

fn library_dir() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?.to_path_buf();
    dir.join("libcsed_ffi.a").exists().then_some(dir)
}

fn which(cmd: &str) -> bool {
    Command::new(cmd).arg("--version").output().is_ok_and(|o| o.status.success())
}

#[test]
fn c_program_links_against_static_library() {
    let Some(lib) = library_dir() else {
        eprintln!("static library not built; skipping C link check");
        return;
    };
    if !which("cc") {
        eprintln!("no C compiler; skipping C link check");
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("main.c");
    let exe = tmp.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(manifest_dir().join("include"))
        .arg(lib.join("libcsed_ffi.a"))
        .args(["-lm", "-lpthread", "-ldl"])
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(Path::new(&exe)).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
