use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use hykey::hsidata::{save_cube, synthetic_cube};
use hykey::model::{Checkpoint, HyKeyConfig, HyKeyNetwork};
use hykey_ffi::*;

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = hykey_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn toy_checkpoint(dir: &Path) -> PathBuf {
    let cfg = HyKeyConfig {
        channels: [4, 8, 8],
        descriptor_dim: 8,
        ..Default::default()
    };
    let path = dir.join("toy.ckpt");
    let net = HyKeyNetwork::new(cfg, 1).unwrap();
    Checkpoint::from_network(&net, 0, 0, serde_json::json!({}))
        .save(&path)
        .unwrap();
    path
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(hykey_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn cube_round_trip_and_shape() {
    let dir = tempfile::tempdir().unwrap();
    let (b, h, w) = (3usize, 4usize, 5usize);
    let data: Vec<f32> = (0..b * h * w).map(|i| i as f32 / 60.0).collect();
    let mut cube = ptr::null_mut();
    unsafe {
        assert_eq!(
            hykey_cube_new(b, h, w, data.as_ptr(), data.len(), &mut cube),
            HykeyStatus::Ok
        );
        let path = cpath(&dir.path().join("c.cube"));
        assert_eq!(hykey_cube_save(cube, path.as_ptr()), HykeyStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(hykey_cube_load(path.as_ptr(), &mut back), HykeyStatus::Ok);
        let (mut bb, mut hh, mut ww) = (0, 0, 0);
        assert_eq!(
            hykey_cube_shape(back, &mut bb, &mut hh, &mut ww),
            HykeyStatus::Ok
        );
        assert_eq!((bb, hh, ww), (b, h, w));
        let loaded = hykey::hsidata::load_cube(dir.path().join("c.cube")).unwrap();
        assert_eq!(loaded.data(), data.as_slice());
        hykey_cube_free(back);
        hykey_cube_free(cube);
        hykey_cube_free(ptr::null_mut());
    }
}

#[test]
fn errors_carry_distinct_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let mut cube = ptr::dangling_mut::<HykeyCube>();
    unsafe {
        let missing = cpath(&dir.path().join("missing.cube"));
        assert_eq!(
            hykey_cube_load(missing.as_ptr(), &mut cube),
            HykeyStatus::CubeIo
        );
        assert!(cube.is_null(), "failed loads leave a null handle");
        assert!(last_error().contains("No such file"), "{}", last_error());

        let junk = dir.path().join("junk.cube");
        std::fs::write(&junk, b"not a cube at all, just text").unwrap();
        assert_eq!(
            hykey_cube_load(cpath(&junk).as_ptr(), &mut cube),
            HykeyStatus::CubeBadMagic
        );

        let good = dir.path().join("good.cube");
        save_cube(&synthetic_cube(4, 6, 6, 0), &good).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 8);
        let cut = dir.path().join("cut.cube");
        std::fs::write(&cut, bytes).unwrap();
        assert_eq!(
            hykey_cube_load(cpath(&cut).as_ptr(), &mut cube),
            HykeyStatus::CubePayloadLength
        );
        assert_eq!(HykeyStatus::CubePayloadLength as i32, 14);

        assert_eq!(
            hykey_cube_load(ptr::null(), &mut cube),
            HykeyStatus::NullArgument
        );
        assert!(last_error().contains("path"));
        assert_eq!(
            hykey_cube_load(cpath(&good).as_ptr(), ptr::null_mut()),
            HykeyStatus::NullArgument
        );

        let data = [0.5f32; 8];
        assert_eq!(
            hykey_cube_new(2, 2, 3, data.as_ptr(), 8, &mut cube),
            HykeyStatus::InvalidArgument
        );
        let data = [1.5f32; 8];
        assert_eq!(
            hykey_cube_new(2, 2, 2, data.as_ptr(), 8, &mut cube),
            HykeyStatus::CubeValueRange
        );

        let bad = CString::new(vec![0xffu8, 0xfe]).unwrap();
        assert_eq!(
            hykey_cube_load(bad.as_ptr(), &mut cube),
            HykeyStatus::InvalidUtf8
        );
        assert_eq!(
            hykey_network_load(cpath(&good).as_ptr(), &mut ptr::null_mut()),
            HykeyStatus::Checkpoint
        );
    }
}

#[test]
fn inference_and_self_matching() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = toy_checkpoint(dir.path());
    let cube_path = dir.path().join("a.cube");
    save_cube(&synthetic_cube(16, 32, 32, 4), &cube_path).unwrap();
    unsafe {
        let (mut net, mut cube, mut feats) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(
            hykey_network_load(cpath(&ckpt).as_ptr(), &mut net),
            HykeyStatus::Ok
        );
        assert_eq!(
            hykey_cube_load(cpath(&cube_path).as_ptr(), &mut cube),
            HykeyStatus::Ok
        );
        assert_eq!(
            hykey_network_infer(net, cube, 64, &mut feats),
            HykeyStatus::Ok
        );

        let (mut n, mut dim) = (0, 0);
        assert_eq!(
            hykey_features_size(feats, &mut n, &mut dim),
            HykeyStatus::Ok
        );
        assert!(n > 0 && n <= 64);
        assert_eq!(dim, 8);

        let mut len = 0;
        assert_eq!(
            hykey_features_keypoints(feats, ptr::null_mut(), 0, &mut len),
            HykeyStatus::Ok
        );
        assert_eq!(len, 2 * n);
        let mut xy = vec![0f32; len];
        let mut short = vec![0f32; 1];
        assert_eq!(
            hykey_features_keypoints(feats, short.as_mut_ptr(), 1, &mut len),
            HykeyStatus::BufferTooSmall
        );
        assert_eq!(
            hykey_features_keypoints(feats, xy.as_mut_ptr(), xy.len(), ptr::null_mut()),
            HykeyStatus::Ok
        );
        assert!(xy.iter().all(|&v| (0.0..32.0).contains(&v)));

        let mut scores = vec![0f32; n];
        assert_eq!(
            hykey_features_scores(feats, scores.as_mut_ptr(), n, &mut len),
            HykeyStatus::Ok
        );
        assert!(scores.iter().all(|&s| s > 0.0 && s < 1.0));
        let mut desc = vec![0f32; n * dim];
        assert_eq!(
            hykey_features_descriptors(feats, desc.as_mut_ptr(), desc.len(), &mut len),
            HykeyStatus::Ok
        );
        for row in desc.chunks(dim) {
            let norm: f32 = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((norm - 1.0).abs() < 1e-3);
        }

        let mut count = 0;
        assert_eq!(
            hykey_match(feats, feats, -2.0, ptr::null_mut(), 0, &mut count),
            HykeyStatus::Ok
        );
        let mut matches = vec![
            HykeyMatch {
                index0: 0,
                index1: 0,
                similarity: 0.0
            };
            count
        ];
        assert_eq!(
            hykey_match(feats, feats, -2.0, matches.as_mut_ptr(), count, &mut count),
            HykeyStatus::Ok
        );
        assert!(count > 0);
        assert!(matches
            .iter()
            .all(|m| m.index0 == m.index1 && (m.similarity - 1.0).abs() < 1e-3));

        hykey_features_free(feats);
        hykey_cube_free(cube);
        hykey_network_free(net);
    }
}

#[test]
fn homography_recovery_through_the_abi() {
    // x' = 1.1 x + 0.05 y + 3, y' = -0.04 x + 0.95 y - 2, with w = 1 + 1e-4 x.
    let h = [1.1, 0.05, 3.0, -0.04, 0.95, -2.0, 1e-4, 0.0, 1.0];
    let (mut p0, mut p1) = (vec![], vec![]);
    for i in 0..60 {
        let (x, y) = ((i % 10) as f64 * 9.0 + 1.0, (i / 10) as f64 * 13.0 + 2.0);
        let w = h[6] * x + h[7] * y + h[8];
        let (u, v) = (
            (h[0] * x + h[1] * y + h[2]) / w,
            (h[3] * x + h[4] * y + h[5]) / w,
        );
        p0.extend([x, y]);
        // Every fifth match is an outlier.
        if i % 5 == 0 {
            p1.extend([u + 25.0, v - 30.0]);
        } else {
            p1.extend([u, v]);
        }
    }
    let mut est = [0f64; 9];
    let mut inliers = vec![0u8; 60];
    let status = unsafe {
        hykey_estimate_homography(
            p0.as_ptr(),
            p1.as_ptr(),
            60,
            1.0,
            7,
            est.as_mut_ptr(),
            inliers.as_mut_ptr(),
        )
    };
    assert_eq!(status, HykeyStatus::Ok);
    for (a, b) in est.iter().zip(h) {
        assert!((a - b).abs() < 1e-6, "{est:?}");
    }
    for (i, &f) in inliers.iter().enumerate() {
        assert_eq!(f, (i % 5 != 0) as u8);
    }
    let status = unsafe {
        hykey_estimate_homography(
            p0.as_ptr(),
            p1.as_ptr(),
            60,
            -1.0,
            7,
            est.as_mut_ptr(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, HykeyStatus::InvalidArgument);
    let status = unsafe {
        hykey_estimate_homography(
            p0.as_ptr(),
            p1.as_ptr(),
            3,
            1.0,
            7,
            est.as_mut_ptr(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, HykeyStatus::Geometry);
}

fn compiler(name: &str) -> Option<String> {
    let ok = Command::new(name)
        .arg("--version")
        .output()
        .is_ok_and(|o| o.status.success());
    ok.then(|| name.to_string())
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/hykey.h")
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let dir = tempfile::tempdir().unwrap();
    let include = header().parent().unwrap().to_path_buf();
    for (cc, ext) in [("cc", "c"), ("c++", "cpp")] {
        let Some(cc) = compiler(cc) else {
            eprintln!("{cc} not found; header check skipped");
            continue;
        };
        let src = dir.path().join(format!("check.{ext}"));
        std::fs::write(
            &src,
            "#include \"hykey.h\"\nint main(void) { return hykey_version() == 0 ? 1 : HYKEY_STATUS_OK; }\n",
        )
        .unwrap();
        let out = Command::new(cc)
            .args(["-fsyntax-only", "-Wall", "-Wextra", "-Werror", "-I"])
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
}

/// Links a C program against the static library when cargo has built it
/// next to the test binary.
#[test]
fn c_program_links_and_reports_errors() {
    let Some(cc) = compiler("cc") else {
        eprintln!("cc not found; link check skipped");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let lib = exe
        .parent()
        .and_then(Path::parent)
        .unwrap()
        .join("libhykey_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; link check skipped", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "hykey.h"

int main(void) {
    HykeyCube *cube = NULL;
    float data[2 * 2 * 2] = {0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f, 0.7f, 0.8f};
    if (hykey_cube_new(2, 2, 2, data, 8, &cube) != HYKEY_STATUS_OK) return 1;
    size_t b = 0, h = 0, w = 0;
    hykey_cube_shape(cube, &b, &h, &w);
    hykey_cube_free(cube);
    if (b != 2 || h != 2 || w != 2) return 2;
    HykeyStatus s = hykey_cube_load("/nonexistent/x.cube", &cube);
    if (s != HYKEY_STATUS_CUBE_IO || cube != NULL) return 3;
    printf("%d %s\n", (int)s, hykey_last_error_message());
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let out = Command::new(cc)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("20 "));
}
