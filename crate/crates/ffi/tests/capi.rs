use std::ffi::CStr;
use std::ptr;

use sprite_core::image::decimate;
use sprite_core::simulation::{make_psf, PsfKind};
use sprite_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(sprite_last_error()) }.to_string_lossy().into_owned()
}

/// Four noise-free exposures covering every d = 2 sampling phase of a Gaussian.
fn phase_planes() -> Vec<(Vec<f64>, (f64, f64))> {
    let hr = make_psf(PsfKind::EllipticalGaussian { sigma_x: 2.5, sigma_y: 2.0, theta: 0.2 }, (32, 32)).unwrap();
    [(0, 0), (0, 1), (1, 0), (1, 1)]
        .iter()
        .map(|&(a, b)| {
            let moved = sprite_core::image::integer_shift(&hr, -a, -b);
            let lr = decimate(&moved, 2).unwrap();
            (lr.into_pixels(), (a as f64 / 2.0, b as f64 / 2.0))
        })
        .collect()
}

#[test]
fn reconstruct_through_handles() {
    unsafe {
        let stack = sprite_stack_new(16, 16, 2);
        assert!(!stack.is_null());
        for (px, shift) in phase_planes() {
            let st = sprite_stack_push(stack, px.as_ptr(), px.len(), 1e-3, 1.0, shift.0, shift.1);
            assert_eq!(st, SpriteStatus::Ok, "{}", last_error());
        }
        assert_eq!(sprite_stack_len(stack), 4);
        let cfg = sprite_config_new();
        assert_eq!(sprite_config_set_transform(cfg, 2), SpriteStatus::Ok);
        assert_eq!(sprite_config_set_kappa(cfg, 3.0), SpriteStatus::Ok);
        assert_eq!(sprite_config_set_iterations(cfg, 30, 1), SpriteStatus::Ok);
        assert_eq!(sprite_config_set_positivity(cfg, true), SpriteStatus::Ok);
        assert_eq!(sprite_config_set_estimate(cfg, false), SpriteStatus::Ok);
        let mut img: *mut SpriteImage = ptr::null_mut();
        assert_eq!(sprite_reconstruct(stack, cfg, &mut img), SpriteStatus::Ok, "{}", last_error());
        assert_eq!((sprite_image_height(img), sprite_image_width(img)), (32, 32));
        let mut buf = vec![0.0; 32 * 32];
        assert_eq!(sprite_image_copy(img, buf.as_mut_ptr(), buf.len()), SpriteStatus::Ok);
        assert!(buf.iter().all(|v| v.is_finite()));
        assert!(buf.iter().cloned().fold(f64::MIN, f64::max) > 0.5);
        assert_eq!(sprite_image_copy(img, buf.as_mut_ptr(), 3), SpriteStatus::InvalidInput);
        sprite_image_free(img);
        sprite_config_free(cfg);
        sprite_stack_free(stack);
    }
}

#[test]
fn error_codes_and_messages() {
    unsafe {
        assert!(sprite_stack_new(0, 4, 2).is_null());
        assert!(last_error().contains("positive"));
        let stack = sprite_stack_new(4, 4, 2);
        let px = [1.0; 16];
        assert_eq!(sprite_stack_push(stack, px.as_ptr(), 15, 1.0, 1.0, 0.0, 0.0), SpriteStatus::InvalidInput);
        assert!(last_error().contains("expected 16"));
        assert_eq!(sprite_stack_push(stack, px.as_ptr(), 16, -1.0, 1.0, 0.0, 0.0), SpriteStatus::InvalidInput);
        assert_eq!(sprite_stack_push(stack, ptr::null(), 16, 1.0, 1.0, 0.0, 0.0), SpriteStatus::NullPointer);
        assert_eq!(sprite_stack_push(ptr::null_mut(), px.as_ptr(), 16, 1.0, 1.0, 0.0, 0.0), SpriteStatus::NullPointer);

        let cfg = sprite_config_new();
        assert_eq!(sprite_config_set_transform(cfg, 7), SpriteStatus::InvalidInput);
        assert_eq!(sprite_config_set_kappa(cfg, -1.0), SpriteStatus::InvalidInput);
        assert_eq!(sprite_config_set_iterations(cfg, 0, 1), SpriteStatus::InvalidInput);
        let mut img: *mut SpriteImage = ptr::null_mut();
        assert_eq!(sprite_reconstruct(stack, cfg, &mut img), SpriteStatus::InvalidInput);
        assert!(img.is_null());
        assert!(last_error().contains("at least one exposure"));

        let zeros = [0.0; 16];
        sprite_stack_push(stack, zeros.as_ptr(), 16, 1.0, 1.0, 0.0, 0.0);
        assert_eq!(sprite_config_set_estimate(cfg, true), SpriteStatus::Ok);
        assert_eq!(sprite_reconstruct(stack, cfg, &mut img), SpriteStatus::Estimation);
        assert_eq!(sprite_reconstruct(ptr::null(), cfg, &mut img), SpriteStatus::NullPointer);

        sprite_config_free(cfg);
        sprite_stack_free(stack);
        sprite_stack_free(ptr::null_mut());
        sprite_config_free(ptr::null_mut());
        sprite_image_free(ptr::null_mut());
        assert_eq!(sprite_stack_len(ptr::null()), 0);
        assert_eq!(sprite_abi_version() >> 16, 1);
    }
}

#[test]
fn header_is_generated_and_compiles() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sprite.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for decl in [
        "typedef struct SpriteStack SpriteStack;",
        "SPRITE_STATUS_ESTIMATION = 3",
        "SpriteStatus sprite_reconstruct(",
        "const char *sprite_last_error(void);",
    ] {
        assert!(text.contains(decl), "header lacks {decl}");
    }
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let Ok(out) = std::process::Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c", "-"])
        .arg(format!("-I{}", header.parent().unwrap().display()))
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .and_then(|mut child| {
            use std::io::Write;
            child.stdin.take().unwrap().write_all(b"#include \"sprite.h\"\nint main(void) { SpriteStack *s = sprite_stack_new(4, 4, 2); sprite_stack_free(s); return 0; }\n")?;
            child.wait_with_output()
        })
    else {
        eprintln!("no C compiler available; skipping syntax check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
