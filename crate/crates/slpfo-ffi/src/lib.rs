//! C ABI over the core library: opaque handles, integer error codes, and a
//! pull-based enumeration session. The session runs the engine on a worker
//! thread behind a rendezvous channel, so the caller pulls one tuple at a
//! time with bounded memory; dropping the session stops the worker.
//!
//! The matching declarations live in `include/slpfo.h`.

use slpfo::engine::{Engine, LexRep};
use slpfo::query::parse_query;
use slpfo::slp::{parse_slp, Slp};
use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::JoinHandle;

pub const SLPFO_OK: c_int = 0;
pub const SLPFO_ERR_PARSE: c_int = 1;
pub const SLPFO_ERR_INVALID: c_int = 2;
pub const SLPFO_ERR_CAP: c_int = 3;
pub const SLPFO_ERR_OTHER: c_int = 4;
pub const SLPFO_ERR_BUFFER: c_int = 5;
pub const SLPFO_ERR_NULL: c_int = 6;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', "?")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn code_of(e: &slpfo::Error) -> c_int {
    match e {
        slpfo::Error::Parse { .. } => SLPFO_ERR_PARSE,
        slpfo::Error::Invalid(_) | slpfo::Error::ApexRequired(_) => SLPFO_ERR_INVALID,
        slpfo::Error::CapExceeded(_) => SLPFO_ERR_CAP,
        slpfo::Error::Other(_) => SLPFO_ERR_OTHER,
    }
}

pub struct SlpfoSlp {
    slp: Slp,
}

pub struct SlpfoEnum {
    rx: Receiver<Result<String, String>>,
    worker: Option<JoinHandle<()>>,
    done: bool,
}

/// Last error message for the calling thread; valid until the next failing
/// call on the same thread.
#[no_mangle]
pub extern "C" fn slpfo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parse SLP text into a handle. Returns an error code; on success `*out`
/// owns the handle and must be released with `slpfo_slp_free`.
///
/// # Safety
/// `text` must be a NUL-terminated UTF-8 string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn slpfo_slp_parse(text: *const c_char, out: *mut *mut SlpfoSlp) -> c_int {
    if text.is_null() || out.is_null() {
        set_error("null argument");
        return SLPFO_ERR_NULL;
    }
    let s = match CStr::from_ptr(text).to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("input is not UTF-8");
            return SLPFO_ERR_PARSE;
        }
    };
    match parse_slp(s) {
        Ok(slp) => {
            *out = Box::into_raw(Box::new(SlpfoSlp { slp }));
            SLPFO_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            code_of(&e)
        }
    }
}

/// # Safety
/// `h` must come from `slpfo_slp_parse` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn slpfo_slp_free(h: *mut SlpfoSlp) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// 0 if the program is well-formed, apex, and acyclic; an error code
/// otherwise (message via `slpfo_last_error`).
///
/// # Safety
/// `h` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn slpfo_slp_validate(h: *const SlpfoSlp) -> c_int {
    let Some(h) = h.as_ref() else {
        set_error("null handle");
        return SLPFO_ERR_NULL;
    };
    let report = h.slp.validate();
    if !report.ok() {
        set_error(&report.errors.join("; "));
        return SLPFO_ERR_INVALID;
    }
    if !report.apex {
        set_error("program is not apex");
        return SLPFO_ERR_INVALID;
    }
    SLPFO_OK
}

/// Program size: universe nodes + arity-weighted tuples + references
/// counted at 1+rank.
///
/// # Safety
/// `h` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn slpfo_slp_size(h: *const SlpfoSlp) -> u64 {
    h.as_ref().map_or(0, |h| h.slp.size() as u64)
}

/// Start enumerating answers of a query (s-expression syntax, local and
/// scattered leaves). On success `*out` owns a session handle.
///
/// # Safety
/// `h` live handle, `query` NUL-terminated UTF-8, `out` valid pointer.
#[no_mangle]
pub unsafe extern "C" fn slpfo_enum_new(
    h: *const SlpfoSlp,
    query: *const c_char,
    out: *mut *mut SlpfoEnum,
) -> c_int {
    if h.is_null() || query.is_null() || out.is_null() {
        set_error("null argument");
        return SLPFO_ERR_NULL;
    }
    let h = &*h;
    let qtext = match CStr::from_ptr(query).to_str() {
        Ok(s) => s.to_string(),
        Err(_) => {
            set_error("query is not UTF-8");
            return SLPFO_ERR_PARSE;
        }
    };
    let q = match parse_query(&h.slp.sig, &qtext) {
        Ok(q) => q,
        Err(e) => {
            set_error(&e.to_string());
            return code_of(&e);
        }
    };
    let mut eng = match Engine::new(h.slp.clone()) {
        Ok(e) => e,
        Err(e) => {
            set_error(&e.to_string());
            return code_of(&e);
        }
    };
    let (tx, rx) = sync_channel::<Result<String, String>>(1);
    let worker = std::thread::spawn(move || {
        let slp = eng.slp.clone();
        let res = eng.enumerate_query(&q, |t: Vec<LexRep>| {
            let line: Vec<String> = t.iter().map(|lr| lr.display(&slp)).collect();
            // receiver gone = caller freed the session: stop enumerating
            tx.send(Ok(line.join("\t"))).is_ok()
        });
        if let Err(e) = res {
            let _ = tx.send(Err(e.to_string()));
        }
    });
    *out = Box::into_raw(Box::new(SlpfoEnum { rx, worker: Some(worker), done: false }));
    SLPFO_OK
}

/// Pull the next tuple as a TSV line of `lexRank:nodeLabel` fields.
/// Returns 1 and fills `buf` on success, 0 at end of enumeration, or a
/// negative error code (`-SLPFO_ERR_BUFFER` if `cap` is too small).
///
/// # Safety
/// `h` live session handle, `buf` writable for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn slpfo_enum_next(h: *mut SlpfoEnum, buf: *mut c_char, cap: usize) -> c_int {
    let Some(session) = h.as_mut() else {
        set_error("null handle");
        return -SLPFO_ERR_NULL;
    };
    if session.done {
        return 0;
    }
    match session.rx.recv() {
        Ok(Ok(line)) => {
            let bytes = line.as_bytes();
            if bytes.len() + 1 > cap {
                set_error("output buffer too small");
                return -SLPFO_ERR_BUFFER;
            }
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, bytes.len());
            *buf.add(bytes.len()) = 0;
            1
        }
        Ok(Err(msg)) => {
            session.done = true;
            set_error(&msg);
            -SLPFO_ERR_OTHER
        }
        Err(_) => {
            session.done = true;
            0
        }
    }
}

/// # Safety
/// `h` must come from `slpfo_enum_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn slpfo_enum_free(h: *mut SlpfoEnum) {
    if h.is_null() {
        return;
    }
    let mut session = Box::from_raw(h);
    // dropping rx unblocks the worker's send; then join it
    let worker = session.worker.take();
    drop(session);
    if let Some(w) = worker {
        let _ = w.join();
    }
}
