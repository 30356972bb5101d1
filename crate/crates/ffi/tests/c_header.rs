//! Compiles a small C program against the generated header and shared
//! library.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "dlsjm.h"

int main(void) {
    uint8_t data[12] = {1,0,1, 1,1,0, 0,1,1, 1,1,1};
    DlsjmMatrix *m = NULL;
    if (dlsjm_matrix_new(4, 3, data, &m) != DLSJM_STATUS_OK) return 10;
    size_t n = 0, p = 0;
    dlsjm_matrix_dims(m, &n, &p);
    dlsjm_matrix_free(m);
    if (n != 4 || p != 3) return 11;
    uint8_t bad[4] = {0, 1, 5, 0};
    if (dlsjm_matrix_new(2, 2, bad, &m) != DLSJM_STATUS_INVALID_INPUT) return 12;
    if (dlsjm_last_error_message() == NULL) return 13;
    printf("%s\n", dlsjm_version());
    return 0;
}
"#;

#[test]
fn header_compiles_and_links() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    let lib = lib_dir.join(format!("{}dlsjm_ffi{}", std::env::consts::DLL_PREFIX, std::env::consts::DLL_SUFFIX));
    assert!(lib.exists(), "shared library not built at {}", lib.display());
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("probe.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let bin = tmp.path().join("probe");
    let status = Command::new(&cc)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&src)
        .arg("-o")
        .arg(&bin)
        .arg(&lib)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .status()
        .expect("C compiler available");
    assert!(status.success(), "C probe failed to compile");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "probe exited with {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
