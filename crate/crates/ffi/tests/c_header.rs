use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <string.h>
#include "cdc.h"

int main(void) {
    uint32_t n = 0, d = 0;
    if (cdc_compression_factor(5, &n, &d) != CDC_STATUS_OK || n != 8 || d != 3) return 1;
    uint8_t rgb[2 * 2 * 3] = {255, 0, 200, 1, 2, 3, 128, 64, 32, 7, 8, 9};
    CdcPacked *p = NULL;
    if (cdc_compress(rgb, sizeof rgb, 2, 2, 5, &p) != CDC_STATUS_OK) return 2;
    uint8_t *bytes = NULL;
    size_t len = 0;
    if (cdc_encode(p, &bytes, &len) != CDC_STATUS_OK || len != 14 + 5) return 3;
    if (memcmp(bytes, "CDC1", 4) != 0) return 4;
    CdcPacked *q = NULL;
    if (cdc_decode(bytes, len, &q) != CDC_STATUS_OK) return 5;
    uint8_t out[12];
    if (cdc_decompress_naive(q, out, sizeof out) != CDC_STATUS_OK) return 6;
    if (out[0] != 240 || out[1] != 16 || out[2] != 208) return 7;
    if (cdc_decode(bytes, 3, &q) == CDC_STATUS_OK || strlen(cdc_last_error()) == 0) return 8;
    cdc_bytes_free(bytes, len);
    cdc_packed_free(p);
    cdc_packed_free(q);
    puts("ok");
    return 0;
}
"#;

fn include_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

/// `target/<profile>`, where cargo leaves the static library.
fn artifact_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn generated_header_compiles_links_and_runs() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let lib = artifact_dir().join("libcdc_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let exe = dir.path().join("main");
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(include_dir())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("a C compiler is available as cc");
    assert!(status.success(), "C compilation failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "ok");
}
