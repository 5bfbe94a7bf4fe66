//! C ABI over the slimkit graph, pruning, metrics and controller APIs.
//!
//! Every fallible function returns a [`SlimkitStatus`]; on failure the
//! message is available from [`slimkit_last_error_message`] on the same
//! thread. Handles are opaque and must be released with their `_free`
//! function. Panics never cross the boundary.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use slimkit::error::Error;
use slimkit::graph::cost::full_report;
use slimkit::graph::io::{load_graph, save_graph};
use slimkit::hmi::{default_bindings, step, Bindings, ControllerState, GestureEvent, PlayerAction};
use slimkit::metrics::{f_score, iou};
use slimkit::prune::{prune, PruneConfig};
use slimkit::GraphModel;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlimkitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    Shape = 6,
    Unprunable = 7,
    Surgery = 8,
    Stream = 9,
    Config = 10,
    Internal = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlimkitAction {
    None = 0,
    Play = 1,
    Pause = 2,
    NextTrack = 3,
    PrevTrack = 4,
    VolumeUp = 5,
    VolumeDown = 6,
}

/// Opaque graph handle.
pub struct SlimkitGraph {
    model: GraphModel,
}

/// Opaque controller handle.
pub struct SlimkitController {
    bindings: Bindings,
    state: ControllerState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> SlimkitStatus {
    match e {
        Error::Io { .. } => SlimkitStatus::Io,
        Error::Parse { .. } | Error::Json(_) => SlimkitStatus::Parse,
        Error::Validation(_) => SlimkitStatus::Validation,
        Error::Shape { .. } => SlimkitStatus::Shape,
        Error::Unprunable => SlimkitStatus::Unprunable,
        Error::Surgery { .. } => SlimkitStatus::Surgery,
        Error::Stream(_) => SlimkitStatus::Stream,
        Error::Config(_) => SlimkitStatus::Config,
        Error::Input(_) => SlimkitStatus::InvalidArgument,
        _ => SlimkitStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), SlimkitStatus>) -> SlimkitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SlimkitStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            SlimkitStatus::Internal
        }
    }
}

fn fail(e: Error) -> SlimkitStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> SlimkitStatus {
    set_error(format!("{what} is null"));
    SlimkitStatus::NullPointer
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, SlimkitStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        SlimkitStatus::InvalidArgument
    })
}

unsafe fn graph_ref<'a>(g: *const SlimkitGraph) -> Result<&'a SlimkitGraph, SlimkitStatus> {
    g.as_ref().ok_or_else(|| null("graph"))
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call on this thread.
#[no_mangle]
pub extern "C" fn slimkit_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static, NUL-terminated version string.
#[no_mangle]
pub extern "C" fn slimkit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load and validate a graph file.
#[no_mangle]
pub unsafe extern "C" fn slimkit_graph_load(path: *const c_char, out: *mut *mut SlimkitGraph) -> SlimkitStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = str_arg(path, "path")?;
        let model = load_graph(p).map_err(fail)?;
        *out = Box::into_raw(Box::new(SlimkitGraph { model }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn slimkit_graph_free(graph: *mut SlimkitGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

#[no_mangle]
pub unsafe extern "C" fn slimkit_graph_validate(graph: *const SlimkitGraph) -> SlimkitStatus {
    guard(|| {
        graph_ref(graph)?.model.validate().map_err(fail)?;
        Ok(())
    })
}

/// Total parameter count (running statistics included).
#[no_mangle]
pub unsafe extern "C" fn slimkit_graph_param_count(graph: *const SlimkitGraph, out: *mut u64) -> SlimkitStatus {
    guard(|| {
        let g = graph_ref(graph)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = full_report(&g.model).map_err(fail)?.params_total;
        Ok(())
    })
}

/// Forward FLOPs at the graph's declared input shape.
#[no_mangle]
pub unsafe extern "C" fn slimkit_graph_flops(graph: *const SlimkitGraph, out: *mut u64) -> SlimkitStatus {
    guard(|| {
        let g = graph_ref(graph)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = full_report(&g.model).map_err(fail)?.flops;
        Ok(())
    })
}

/// Prune at `rate` into a new handle; the source handle is untouched.
#[no_mangle]
pub unsafe extern "C" fn slimkit_graph_prune(
    graph: *const SlimkitGraph,
    rate: f64,
    out: *mut *mut SlimkitGraph,
) -> SlimkitStatus {
    guard(|| {
        let g = graph_ref(graph)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let (model, _) = prune(&g.model, &PruneConfig::with_rate(rate)).map_err(fail)?;
        *out = Box::into_raw(Box::new(SlimkitGraph { model }));
        Ok(())
    })
}

/// Write the graph atomically.
#[no_mangle]
pub unsafe extern "C" fn slimkit_graph_save(graph: *const SlimkitGraph, path: *const c_char) -> SlimkitStatus {
    guard(|| {
        let g = graph_ref(graph)?;
        let p = str_arg(path, "path")?;
        save_graph(&g.model, p).map_err(fail)?;
        Ok(())
    })
}

/// IoU of two `[x1, y1, x2, y2]` boxes; NaN if either pointer is null.
#[no_mangle]
pub unsafe extern "C" fn slimkit_iou(a: *const f64, b: *const f64) -> f64 {
    if a.is_null() || b.is_null() {
        return f64::NAN;
    }
    let a: [f64; 4] = *(a as *const [f64; 4]);
    let b: [f64; 4] = *(b as *const [f64; 4]);
    iou(&a, &b)
}

/// Harmonic mean of precision and recall (0 when both are 0).
#[no_mangle]
pub extern "C" fn slimkit_f_score(precision: f64, recall: f64) -> f64 {
    f_score(precision, recall)
}

/// Controller with the default gesture bindings.
#[no_mangle]
pub unsafe extern "C" fn slimkit_controller_new(out: *mut *mut SlimkitController) -> SlimkitStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(SlimkitController {
            bindings: default_bindings(),
            state: ControllerState::default(),
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn slimkit_controller_free(ctrl: *mut SlimkitController) {
    if !ctrl.is_null() {
        drop(Box::from_raw(ctrl));
    }
}

/// Feed one gesture event; `*action` receives the action to perform.
#[no_mangle]
pub unsafe extern "C" fn slimkit_controller_step(
    ctrl: *mut SlimkitController,
    t_ms: u64,
    label: *const c_char,
    confidence: f64,
    action: *mut SlimkitAction,
) -> SlimkitStatus {
    guard(|| {
        let c = ctrl.as_mut().ok_or_else(|| null("controller"))?;
        if action.is_null() {
            return Err(null("action"));
        }
        let label = str_arg(label, "label")?;
        let ev = GestureEvent::new(t_ms, label, confidence);
        let fired = step(&mut c.state, &ev, &c.bindings).map_err(fail)?;
        *action = match fired {
            None | Some(PlayerAction::NoOp) => SlimkitAction::None,
            Some(PlayerAction::Play) => SlimkitAction::Play,
            Some(PlayerAction::Pause) => SlimkitAction::Pause,
            Some(PlayerAction::NextTrack) => SlimkitAction::NextTrack,
            Some(PlayerAction::PrevTrack) => SlimkitAction::PrevTrack,
            Some(PlayerAction::VolumeUp) => SlimkitAction::VolumeUp,
            Some(PlayerAction::VolumeDown) => SlimkitAction::VolumeDown,
        };
        Ok(())
    })
}
