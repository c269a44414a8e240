use std::ffi::{CStr, CString};
use std::ptr;

use ldpnet::model::checkpoint::save_checkpoint;
use ldpnet::model::{LdpNet, ModelConfig};
use ldpnet_ffi::*;

fn raster(bands: usize, w: usize, f: impl Fn(usize) -> f32) -> *mut LdpRaster {
    let data: Vec<f32> = (0..bands * w * w).map(f).collect();
    let mut out = ptr::null_mut();
    let s = unsafe { ldp_raster_new(bands, w, w, data.as_ptr(), LdpRange::Unit, &mut out) };
    assert_eq!(s, LdpStatus::Ok);
    out
}

fn last_error() -> String {
    let p = ldp_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn ms() -> *mut LdpRaster {
    raster(4, 8, |i| 0.2 + 0.6 * ((i * 37 % 101) as f32 / 101.0))
}

fn pan() -> *mut LdpRaster {
    raster(1, 32, |i| (i * 53 % 97) as f32 / 97.0)
}

#[test]
fn raster_round_trip_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("a.ldpr").to_str().unwrap()).unwrap();
    let r = ms();
    unsafe {
        assert_eq!(ldp_raster_save(r, path.as_ptr()), LdpStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(ldp_raster_load(path.as_ptr(), &mut back), LdpStatus::Ok);
        assert_eq!((ldp_raster_bands(back), ldp_raster_width(back), ldp_raster_height(back)), (4, 8, 8));
        assert_eq!(ldp_raster_range(back), LdpRange::Unit);
        let a = std::slice::from_raw_parts(ldp_raster_data(r), 256);
        let b = std::slice::from_raw_parts(ldp_raster_data(back), 256);
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        ldp_raster_free(back);
        ldp_raster_free(r);
    }
}

#[test]
fn errors_carry_a_status_and_a_message() {
    unsafe {
        let mut out = ptr::null_mut();
        let missing = CString::new("/nonexistent/x.ldpr").unwrap();
        assert_eq!(ldp_raster_load(missing.as_ptr(), &mut out), LdpStatus::Io);
        assert!(out.is_null());
        assert!(last_error().contains("/nonexistent/x.ldpr"));

        assert_eq!(ldp_raster_load(ptr::null(), &mut out), LdpStatus::NullPointer);
        let data = [2.0f32; 4];
        assert_eq!(ldp_raster_new(1, 2, 2, data.as_ptr(), LdpRange::Unit, &mut out), LdpStatus::InvalidArgument);
        assert_eq!(ldp_raster_new(1, 2, 2, data.as_ptr(), LdpRange::Unit, ptr::null_mut()), LdpStatus::NullPointer);

        ldp_clear_error();
        assert!(ldp_last_error_message().is_null());

        let (m, p) = (ms(), raster(1, 30, |_| 0.5));
        assert_eq!(ldp_baseline_fuse(LdpMethod::Ihs, m, p, 4, &mut out), LdpStatus::Shape);
        ldp_raster_free(m);
        ldp_raster_free(p);
        ldp_raster_free(ptr::null_mut());
        assert_eq!(ldp_raster_bands(ptr::null()), 0);
    }
}

#[test]
fn baselines_and_metrics() {
    unsafe {
        let (m, p) = (ms(), pan());
        for method in [LdpMethod::Ihs, LdpMethod::Brovey, LdpMethod::Pca] {
            let mut f = ptr::null_mut();
            assert_eq!(ldp_baseline_fuse(method, m, p, 4, &mut f), LdpStatus::Ok);
            assert_eq!((ldp_raster_bands(f), ldp_raster_width(f)), (4, 32));

            let mut red = [f64::NAN; LDP_REDUCED_METRICS];
            assert_eq!(ldp_metrics_reduced(f, f, 4, 8, red.as_mut_ptr()), LdpStatus::Ok);
            assert!(red[0].abs() < 1e-9 && (red[1] - 1.0).abs() < 1e-9 && red[2].abs() < 1e-9 && (red[3] - 1.0).abs() < 1e-9);

            let mut full = [f64::NAN; LDP_FULL_METRICS];
            assert_eq!(ldp_metrics_full(f, m, p, 4, 8, full.as_mut_ptr()), LdpStatus::Ok);
            assert_eq!(full[2], (1.0 - full[0]) * (1.0 - full[1]));
            ldp_raster_free(f);
        }
        ldp_raster_free(m);
        ldp_raster_free(p);
    }
}

#[test]
fn model_load_and_pansharpen() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("m.ldpc");
    let net = LdpNet::<f32>::new(ModelConfig::micro()).unwrap();
    save_checkpoint(&ck, &net, None).unwrap();
    let path = CString::new(ck.to_str().unwrap()).unwrap();
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(ldp_model_load(path.as_ptr(), &mut model), LdpStatus::Ok);
        assert_eq!((ldp_model_bands(model), ldp_model_ratio(model)), (4, 4));

        let (m, p) = (ms(), pan());
        let mut f = ptr::null_mut();
        assert_eq!(ldp_model_pansharpen(model, m, p, &mut f), LdpStatus::Ok);
        let expected = net
            .pansharpen(
                &ldpnet::raster::Raster::new(4, 8, 8, std::slice::from_raw_parts(ldp_raster_data(m), 256).to_vec(), ldpnet::raster::RangeTag::Unit).unwrap(),
                &ldpnet::raster::Raster::new(1, 32, 32, std::slice::from_raw_parts(ldp_raster_data(p), 1024).to_vec(), ldpnet::raster::RangeTag::Unit).unwrap(),
            )
            .unwrap();
        assert_eq!(std::slice::from_raw_parts(ldp_raster_data(f), 4 * 1024), expected.data());

        let mut bad = ptr::null_mut();
        assert_eq!(ldp_model_pansharpen(model, p, p, &mut bad), LdpStatus::Shape);
        assert!(bad.is_null());

        let junk = dir.path().join("junk.ldpc");
        std::fs::write(&junk, b"not a checkpoint").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        let mut other = ptr::null_mut();
        assert_eq!(ldp_model_load(junk.as_ptr(), &mut other), LdpStatus::Checkpoint);

        ldp_raster_free(f);
        ldp_raster_free(m);
        ldp_raster_free(p);
        ldp_model_free(model);
    }
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(ldp_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/ldpnet.h")).unwrap();
    for f in [
        "ldp_version",
        "ldp_last_error_message",
        "ldp_raster_new",
        "ldp_raster_load",
        "ldp_raster_save",
        "ldp_raster_free",
        "ldp_raster_data",
        "ldp_baseline_fuse",
        "ldp_model_load",
        "ldp_model_pansharpen",
        "ldp_model_free",
        "ldp_metrics_reduced",
        "ldp_metrics_full",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct LdpRaster LdpRaster;"));
    assert!(header.contains("LDP_STATUS_OK = 0"));

    // Syntax check with a C compiler when one is installed.
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(&src, "#include \"ldpnet.h\"\nint main(void) { LdpRaster *r = 0; return ldp_raster_bands(r) == 0 ? 0 : 1; }\n").unwrap();
    let status = std::process::Command::new(cc)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .ok_or(())
}
