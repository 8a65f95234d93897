use std::path::Path;
use std::process::Command;

const EXPORTS: [&str; 9] = [
    "kws_engine_new_from_config",
    "kws_engine_free",
    "kws_engine_num_units",
    "kws_engine_run_files",
    "kws_engine_run_buffers",
    "kws_detections_len",
    "kws_detections_get",
    "kws_detections_free",
    "kws_last_error_message",
];

fn header() -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/kws.h");
    std::fs::read_to_string(path).expect("header is generated by the build script")
}

#[test]
fn declares_every_export() {
    let h = header();
    for name in EXPORTS {
        assert!(h.contains(&format!("{name}(")), "missing {name}");
    }
    assert!(h.contains("typedef struct KwsEngine KwsEngine;"));
    assert!(h.contains("KWS_STATUS_OK = 0"));
}

#[test]
fn compiles_as_c() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"kws.h\"\n\
         int main(void) {\n\
           KwsEngine *e = 0;\n\
           KwsStatus s = kws_engine_new_from_config(\"x\", &e);\n\
           KwsDetection d;\n\
           (void)d; (void)s;\n\
           return 0;\n\
         }\n",
    )
    .unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| {
            Command::new(c)
                .arg("--version")
                .output()
                .is_ok_and(|o| o.status.success())
        })
        .ok_or(())
}
