//! Exercises the exported functions through their C signatures: raw
//! pointers, NUL-terminated strings, and caller-provided buffers.

use slpfo_ffi::*;
use std::ffi::{c_char, CStr, CString};
use std::ptr;

fn fixture_text() -> CString {
    let text = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../fixtures/example6.slp"
    ))
    .unwrap();
    CString::new(text).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(slpfo_last_error()).to_string_lossy().into_owned() }
}

fn parse_fixture() -> *mut SlpfoSlp {
    let text = fixture_text();
    let mut slp: *mut SlpfoSlp = ptr::null_mut();
    let rc = unsafe { slpfo_slp_parse(text.as_ptr(), &mut slp) };
    assert_eq!(rc, SLPFO_OK, "{}", last_error());
    assert!(!slp.is_null());
    slp
}

#[test]
fn parse_validate_size() {
    let slp = parse_fixture();
    unsafe {
        assert_eq!(slpfo_slp_validate(slp), SLPFO_OK);
        assert_eq!(slpfo_slp_size(slp), 28);
        slpfo_slp_free(slp);
    }
}

#[test]
fn parse_rejects_garbage() {
    let text = CString::new("nonterminal ???").unwrap();
    let mut slp: *mut SlpfoSlp = ptr::null_mut();
    let rc = unsafe { slpfo_slp_parse(text.as_ptr(), &mut slp) };
    assert_ne!(rc, SLPFO_OK);
    assert!(slp.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn null_arguments_are_error_codes_not_crashes() {
    let mut slp: *mut SlpfoSlp = ptr::null_mut();
    unsafe {
        assert_eq!(slpfo_slp_parse(ptr::null(), &mut slp), SLPFO_ERR_NULL);
        assert_eq!(slpfo_slp_validate(ptr::null()), SLPFO_ERR_NULL);
        assert_eq!(slpfo_slp_size(ptr::null()), 0);
        slpfo_slp_free(ptr::null_mut());
        slpfo_enum_free(ptr::null_mut());
    }
}

#[test]
fn enumerate_all_answers() {
    let slp = parse_fixture();
    let query = CString::new("(local :r 1 :vars (x) (exists y (r1 x y)))").unwrap();
    let mut session: *mut SlpfoEnum = ptr::null_mut();
    let rc = unsafe { slpfo_enum_new(slp, query.as_ptr(), &mut session) };
    assert_eq!(rc, SLPFO_OK, "{}", last_error());

    let mut buf = [0 as c_char; 256];
    let mut lines = Vec::new();
    loop {
        let rc = unsafe { slpfo_enum_next(session, buf.as_mut_ptr(), buf.len()) };
        if rc == 0 {
            break;
        }
        assert_eq!(rc, 1, "{}", last_error());
        let line = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_string();
        assert!(line.contains(':'));
        lines.push(line);
    }
    // nodes with an out-edge in val: u, v, w (x3 paths), n2 (x2 paths)
    assert_eq!(lines.len(), 7);
    let unique: std::collections::HashSet<_> = lines.iter().collect();
    assert_eq!(unique.len(), 7);

    // after end-of-enumeration, next keeps returning 0
    let rc = unsafe { slpfo_enum_next(session, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(rc, 0);
    unsafe {
        slpfo_enum_free(session);
        slpfo_slp_free(slp);
    }
}

#[test]
fn tiny_buffer_reports_buffer_error() {
    let slp = parse_fixture();
    let query = CString::new("(local :r 1 :vars (x y) (r1 x y))").unwrap();
    let mut session: *mut SlpfoEnum = ptr::null_mut();
    assert_eq!(unsafe { slpfo_enum_new(slp, query.as_ptr(), &mut session) }, SLPFO_OK);
    let mut buf = [0 as c_char; 2];
    let rc = unsafe { slpfo_enum_next(session, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(rc, -SLPFO_ERR_BUFFER);
    unsafe {
        slpfo_enum_free(session);
        slpfo_slp_free(slp);
    }
}

#[test]
fn early_free_stops_the_worker() {
    let slp = parse_fixture();
    let query = CString::new("(local :r 1 :vars (x y) (r1 x y))").unwrap();
    let mut session: *mut SlpfoEnum = ptr::null_mut();
    assert_eq!(unsafe { slpfo_enum_new(slp, query.as_ptr(), &mut session) }, SLPFO_OK);
    let mut buf = [0 as c_char; 256];
    assert_eq!(unsafe { slpfo_enum_next(session, buf.as_mut_ptr(), buf.len()) }, 1);
    // free with answers still pending; must join the worker without hanging
    unsafe {
        slpfo_enum_free(session);
        slpfo_slp_free(slp);
    }
}

#[test]
fn bad_query_surfaces_parse_error() {
    let slp = parse_fixture();
    let query = CString::new("(local :r 1 :vars (x) (r9 x x))").unwrap();
    let mut session: *mut SlpfoEnum = ptr::null_mut();
    let rc = unsafe { slpfo_enum_new(slp, query.as_ptr(), &mut session) };
    assert_ne!(rc, SLPFO_OK);
    assert!(session.is_null());
    unsafe { slpfo_slp_free(slp) };
}
