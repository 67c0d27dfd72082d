use std::ffi::CString;
use std::path::Path;
use std::process::Command;
use std::ptr;

use zoomvqa::harness::{checkpoint, RunConfig};
use zoomvqa::iqa::IqaParams;
use zoomvqa::media::{self, SynthOptions};
use zoomvqa::rng::{stream, Purpose};
use zoomvqa::vqa::VqaParams;
use zoomvqa_ffi::*;

fn last_error() -> String {
    let n = unsafe { zv_last_error(ptr::null_mut(), 0) };
    let mut buf = vec![0 as std::ffi::c_char; n];
    unsafe { zv_last_error(buf.as_mut_ptr(), n) };
    let bytes: Vec<u8> = buf.iter().take_while(|&&c| c != 0).map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn scalar_functions() {
    assert_eq!(zv_fuse(0.0, 0.0), 0.5);
    let (p, l) = ([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]);
    let mut v = f64::NAN;
    let mut g = [0.0; 3];
    unsafe {
        assert_eq!(zv_srcc(p.as_ptr(), l.as_ptr(), 3, &mut v), ZvStatus::Ok);
        assert_eq!(v, 1.0);
        let mut m = ZvMetrics::default();
        assert_eq!(zv_main_score([3.0, 2.0, 1.0].as_ptr(), l.as_ptr(), 3, &mut m), ZvStatus::Ok);
        assert_eq!((m.srcc, m.main_score), (-1.0, -1.0));
        assert_eq!(zv_plcc_loss([3.0, 2.0, 1.0].as_ptr(), l.as_ptr(), 3, &mut v, g.as_mut_ptr()), ZvStatus::Ok);
        assert!((v - 1.0).abs() < 1e-12);
        assert_eq!(zv_rank_loss([0.5, 0.5].as_ptr(), [0.0, 1.0].as_ptr(), 2, &mut v, ptr::null_mut()), ZvStatus::Ok);
        assert_eq!(v, 0.5);
        assert_eq!(
            zv_combined_loss([1.0, 0.0].as_ptr(), [0.0, 1.0].as_ptr(), 2, 0.3, &mut v, g.as_mut_ptr()),
            ZvStatus::Ok
        );
        assert!((v - 1.3).abs() < 1e-12);
        let mut d = 0.0;
        assert_eq!(zv_smooth_l1(0.0, 2.0, &mut v, &mut d), ZvStatus::Ok);
        assert_eq!((v, d), (1.5, -1.0));
    }
}

#[test]
fn errors_are_reported() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(zv_plcc([1.0, 1.0].as_ptr(), [1.0, 2.0].as_ptr(), 2, &mut v), ZvStatus::Degenerate);
        assert!(last_error().contains("undefined metric"), "{}", last_error());
        assert_eq!(
            zv_plcc_loss([1.0, 1.0].as_ptr(), [1.0, 2.0].as_ptr(), 2, &mut v, ptr::null_mut()),
            ZvStatus::Degenerate
        );
        assert_eq!(zv_srcc(ptr::null(), [1.0].as_ptr(), 1, &mut v), ZvStatus::NullArgument);
        assert_eq!(zv_srcc([1.0].as_ptr(), [1.0].as_ptr(), 1, ptr::null_mut()), ZvStatus::NullArgument);

        let mut video = ptr::null_mut();
        let missing = CString::new("/nonexistent/clip.rgb24").unwrap();
        assert_ne!(zv_video_open(missing.as_ptr(), &mut video), ZvStatus::Ok);
        assert!(video.is_null());
        assert_eq!(zv_video_from_rgb24(4, 4, 8, 1, 2, [0u8; 10].as_ptr(), 10, &mut video), ZvStatus::Format);
        assert!(last_error().contains("corrupt payload"));
        let mut model = ptr::null_mut();
        assert_eq!(zv_vqa_load(missing.as_ptr(), &mut model), ZvStatus::Io);

        // truncation keeps the NUL terminator inside the buffer
        let mut small = [1 as std::ffi::c_char; 4];
        assert!(zv_last_error(small.as_mut_ptr(), 4) > 4);
        assert_eq!(small[3], 0);
        zv_video_free(ptr::null_mut());
    }
}

#[test]
fn errors_are_thread_local() {
    let mut v = 0.0;
    unsafe { zv_srcc(ptr::null(), ptr::null(), 3, &mut v) };
    let here = last_error();
    std::thread::spawn(|| assert_eq!(last_error(), "")).join().unwrap();
    assert_eq!(last_error(), here);
}

#[test]
fn scores_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let opts = SynthOptions { n_videos: 2, width: 48, height: 48, num_frames: 8, fps_num: 4, ..Default::default() };
    let m = media::synth_dataset(&opts, dir.path()).unwrap();
    let video_path = m.payload_path(&m.records[0]);
    let cfg = RunConfig::toy();
    let ip: IqaParams<f32> = IqaParams::init(&cfg.iqa.arch(), &mut stream(1, Purpose::Init, &[])).unwrap();
    let vp: VqaParams<f32> = VqaParams::init(&cfg.vqa.arch(), &mut stream(2, Purpose::Init, &[])).unwrap();
    let (ipath, vpath) = (dir.path().join("i.ckpt"), dir.path().join("v.ckpt"));
    checkpoint::save_iqa(&ipath, &ip).unwrap();
    checkpoint::save_vqa(&vpath, &vp).unwrap();
    let raw = media::load_raw_video(&video_path).unwrap();
    let (want_i, want_v) = zoomvqa::harness::eval::score_video(&raw, &ip, &vp, &cfg).unwrap();

    unsafe {
        let (mut video, mut im, mut vm, mut c) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(zv_video_open(cpath(&video_path).as_ptr(), &mut video), ZvStatus::Ok);
        assert_eq!(zv_iqa_load(cpath(&ipath).as_ptr(), &mut im), ZvStatus::Ok);
        assert_eq!(zv_vqa_load(cpath(&vpath).as_ptr(), &mut vm), ZvStatus::Ok);
        assert_eq!(zv_config_toy(&mut c), ZvStatus::Ok);
        let (mut w, mut h, mut n) = (0, 0, 0);
        assert_eq!(zv_video_info(video, &mut w, &mut h, &mut n), ZvStatus::Ok);
        assert_eq!((w, h, n), (48, 48, 8));

        let (mut yi, mut yv, mut yf) = (0.0, 0.0, 0.0);
        assert_eq!(zv_score_video(c, im, vm, video, &mut yi, &mut yv, &mut yf), ZvStatus::Ok);
        assert_eq!((yi, yv), (want_i, want_v));
        assert_eq!(yf, zv_fuse(yi, yv));
        let mut s = 0.0;
        assert_eq!(zv_score_iqa(c, im, video, &mut s), ZvStatus::Ok);
        assert_eq!(s, yi);
        assert_eq!(zv_score_vqa(c, vm, video, &mut s), ZvStatus::Ok);
        assert_eq!(s, yv);

        // a model loaded as the wrong kind is rejected
        let mut wrong = ptr::null_mut();
        assert_eq!(zv_vqa_load(cpath(&ipath).as_ptr(), &mut wrong), ZvStatus::Checkpoint);
        assert_eq!(zv_score_vqa(c, ptr::null(), video, &mut s), ZvStatus::NullArgument);

        let mut copy = ptr::null_mut();
        assert_eq!(
            zv_video_from_rgb24(48, 48, 4, 1, 8, raw.frames.as_ptr(), raw.frames.len(), &mut copy),
            ZvStatus::Ok
        );
        assert_eq!(zv_config_set_seed(c, cfg.seed), ZvStatus::Ok);
        assert_eq!(zv_score_iqa(c, im, copy, &mut s), ZvStatus::Ok);
        assert_eq!(s, yi);

        zv_video_free(copy);
        zv_video_free(video);
        zv_iqa_free(im);
        zv_vqa_free(vm);
        zv_config_free(c);
    }
}

#[test]
fn config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    std::fs::write(&p, r#"{"iqa": {"crop": 30}}"#).unwrap();
    let mut c = ptr::null_mut();
    unsafe {
        assert_eq!(zv_config_load(cpath(&p).as_ptr(), &mut c), ZvStatus::InvalidArgument);
        assert!(c.is_null());
        assert_eq!(zv_config_default(&mut c), ZvStatus::Ok);
        zv_config_free(c);
    }
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/zoomvqa.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["zv_last_error", "zv_video_open", "zv_score_video", "zv_fuse", "zv_rank_loss", "ZV_STATUS_PANIC"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    for (lang, std) in [("c", "-std=c99"), ("c++", "-std=c++11")] {
        let Ok(out) =
            Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", std, "-x", lang]).arg(&header).output()
        else {
            eprintln!("no C compiler; skipping syntax check");
            return;
        };
        assert!(out.status.success(), "{lang}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
