//! C ABI over the `hsimamba` crate.
//!
//! Every function returns an [`HsmStatus`]; on failure the message is
//! available from [`hsm_last_error`] until the next call on the same thread.
//! Objects are opaque handles released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hsimamba::checkpoint::{load_checkpoint, save_checkpoint};
use hsimamba::cli::{EXIT_DIVERGED, EXIT_IO};
use hsimamba::data::{build_split, gen_synthetic, read_cube, write_cube, HsiCube, Normalization};
use hsimamba::model::{argmax_rows, logits};
use hsimamba::sweep::split_patch_sets;
use hsimamba::train::{train, TrainConfig};
use hsimamba::{BlockConfig, Error, ModelConfig, ModelParams, Tensor};

/// Status codes; the nonzero values match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HsmStatus {
    Ok = 0,
    NullPointer = 1,
    Validation = 2,
    Diverged = 3,
    Io = 4,
    Panic = 5,
}

/// Opaque hyperspectral cube.
pub struct HsmCube {
    cube: HsiCube,
}

/// Opaque trained classifier.
pub struct HsmModel {
    config: ModelConfig,
    params: ModelParams<f32>,
}

/// Training settings. Obtain defaults from `hsm_train_options_default`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HsmTrainOptions {
    pub patch: u32,
    pub hidden: u32,
    pub epochs: u32,
    pub batch_size: u32,
    pub lr: f64,
    pub seed: u64,
    /// Nonzero enables the rotation and flip copies.
    pub augment: u8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HsmStatus {
    match hsimamba::cli::exit_code(e) {
        EXIT_IO => HsmStatus::Io,
        EXIT_DIVERGED => HsmStatus::Diverged,
        _ => HsmStatus::Validation,
    }
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), HsmFail>) -> HsmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HsmStatus::Ok,
        Ok(Err(HsmFail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            HsmStatus::NullPointer
        }
        Ok(Err(HsmFail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            HsmStatus::Panic
        }
    }
}

enum HsmFail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for HsmFail {
    fn from(e: Error) -> Self {
        HsmFail::Lib(e)
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, HsmFail> {
    p.as_ref().ok_or(HsmFail::Null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<String, HsmFail> {
    if p.is_null() {
        return Err(HsmFail::Null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| HsmFail::Lib(Error::Config("path is not valid UTF-8".into())))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), HsmFail> {
    if out.is_null() {
        return Err(HsmFail::Null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. Owned by the
/// library; valid until the next call.
#[no_mangle]
pub extern "C" fn hsm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hsm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn hsm_train_options_default() -> HsmTrainOptions {
    let t = TrainConfig::default();
    HsmTrainOptions {
        patch: 7,
        hidden: 16,
        epochs: t.epochs as u32,
        batch_size: t.batch_size as u32,
        lr: t.lr,
        seed: t.seed,
        augment: u8::from(t.augment),
    }
}

/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn hsm_cube_synthetic(
    height: u32,
    width: u32,
    bands: u32,
    classes: u32,
    noise_sigma: f64,
    seed: u64,
    out: *mut *mut HsmCube,
) -> HsmStatus {
    guard(|| {
        let cube = gen_synthetic(
            height as usize,
            width as usize,
            bands as usize,
            classes as usize,
            noise_sigma,
            seed,
        )?;
        write_out(out, HsmCube { cube })
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` as for `hsm_cube_synthetic`.
#[no_mangle]
pub unsafe extern "C" fn hsm_cube_read(path: *const c_char, out: *mut *mut HsmCube) -> HsmStatus {
    guard(|| {
        let cube = read_cube(path_arg(path)?)?;
        write_out(out, HsmCube { cube })
    })
}

/// # Safety
/// `cube` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hsm_cube_write(cube: *const HsmCube, path: *const c_char) -> HsmStatus {
    guard(|| {
        let c = deref(cube, "cube")?;
        write_cube(&c.cube, path_arg(path)?)?;
        Ok(())
    })
}

/// Writes height, width, bands and class count. Any output may be NULL.
///
/// # Safety
/// `cube` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn hsm_cube_dims(
    cube: *const HsmCube,
    height: *mut u32,
    width: *mut u32,
    bands: *mut u32,
    classes: *mut u32,
) -> HsmStatus {
    guard(|| {
        let c = &deref(cube, "cube")?.cube;
        for (out, v) in [
            (height, c.height),
            (width, c.width),
            (bands, c.bands),
            (classes, c.num_classes),
        ] {
            if let Some(o) = out.as_mut() {
                *o = v as u32;
            }
        }
        Ok(())
    })
}

/// Min-max normalizes every band and draws `train_per_class` training
/// pixels per class; the rest become test pixels.
///
/// # Safety
/// `cube` must be a live handle not used concurrently.
#[no_mangle]
pub unsafe extern "C" fn hsm_cube_prepare(
    cube: *mut HsmCube,
    train_per_class: u32,
    seed: u64,
) -> HsmStatus {
    guard(|| {
        let c = &mut cube.as_mut().ok_or(HsmFail::Null("cube"))?.cube;
        c.normalize(Normalization::MinMax);
        let counts = vec![train_per_class as usize; c.num_classes];
        build_split(c, &counts, seed)?.apply(c)?;
        Ok(())
    })
}

/// # Safety
/// `cube` must come from this library and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn hsm_cube_free(cube: *mut HsmCube) {
    if !cube.is_null() {
        drop(Box::from_raw(cube));
    }
}

/// Trains on the cube's split and writes the new model to `out`. Test-set
/// overall accuracy goes to `test_oa` when it is not NULL.
///
/// # Safety
/// `cube` must be a prepared live handle, `options` readable, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hsm_model_train(
    cube: *const HsmCube,
    options: *const HsmTrainOptions,
    out: *mut *mut HsmModel,
    test_oa: *mut f64,
) -> HsmStatus {
    guard(|| {
        let c = &deref(cube, "cube")?.cube;
        let o = *deref(options, "options")?;
        let block = BlockConfig::new(o.patch as usize, c.bands, o.hidden as usize, o.hidden as usize);
        let config = ModelConfig::new(block, c.num_classes, o.seed);
        let tc = TrainConfig {
            lr: o.lr,
            batch_size: o.batch_size as usize,
            epochs: o.epochs as usize,
            seed: o.seed,
            augment: o.augment != 0,
            ..TrainConfig::default()
        };
        config.validate()?;
        tc.validate()?;
        let (tr, te) = split_patch_sets(c, config.block.spatial_dim)?;
        let (params, report) = train::<f32>(&config, &tr, &te, &tc)?;
        if let Some(oa) = test_oa.as_mut() {
            *oa = report.oa;
        }
        write_out(out, HsmModel { config, params })
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hsm_model_load(path: *const c_char, out: *mut *mut HsmModel) -> HsmStatus {
    guard(|| {
        let ck = load_checkpoint(path_arg(path)?)?;
        let params = ck.to_params::<f32>()?;
        write_out(
            out,
            HsmModel {
                config: ck.config,
                params,
            },
        )
    })
}

/// # Safety
/// `model` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn hsm_model_save(model: *const HsmModel, path: *const c_char) -> HsmStatus {
    guard(|| {
        let m = deref(model, "model")?;
        save_checkpoint(path_arg(path)?, &m.config, &m.params)?;
        Ok(())
    })
}

/// Input geometry and class count of a model. Any output may be NULL.
///
/// # Safety
/// `model` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn hsm_model_info(
    model: *const HsmModel,
    patch: *mut u32,
    bands: *mut u32,
    classes: *mut u32,
) -> HsmStatus {
    guard(|| {
        let cfg = &deref(model, "model")?.config;
        for (out, v) in [
            (patch, cfg.block.spatial_dim),
            (bands, cfg.block.num_bands),
            (classes, cfg.num_classes),
        ] {
            if let Some(o) = out.as_mut() {
                *o = v as u32;
            }
        }
        Ok(())
    })
}

unsafe fn run_logits(model: *const HsmModel, patches: *const f32, count: usize) -> Result<Tensor<f32>, HsmFail> {
    let m = deref(model, "model")?;
    if patches.is_null() {
        return Err(HsmFail::Null("patches"));
    }
    if count == 0 {
        return Err(Error::Config("count must be positive".into()).into());
    }
    let shape = m.config.block.input_shape(count);
    let n: usize = shape.iter().product();
    let data = std::slice::from_raw_parts(patches, n).to_vec();
    Ok(logits(&m.params, &m.config, &Tensor::new(&shape, data)?)?)
}

/// Class scores for `count` patches laid out `[count, p, p, bands]`;
/// writes `count × classes` values to `out`.
///
/// # Safety
/// `patches` must hold `count·p·p·bands` floats and `out` room for
/// `count·classes` floats.
#[no_mangle]
pub unsafe extern "C" fn hsm_model_logits(
    model: *const HsmModel,
    patches: *const f32,
    count: usize,
    out: *mut f32,
) -> HsmStatus {
    guard(|| {
        let l = run_logits(model, patches, count)?;
        if out.is_null() {
            return Err(HsmFail::Null("out"));
        }
        ptr::copy_nonoverlapping(l.data().as_ptr(), out, l.numel());
        Ok(())
    })
}

/// 0-based predicted class per patch.
///
/// # Safety
/// As for `hsm_model_logits`, with `labels` room for `count` values.
#[no_mangle]
pub unsafe extern "C" fn hsm_model_predict(
    model: *const HsmModel,
    patches: *const f32,
    count: usize,
    labels: *mut u32,
) -> HsmStatus {
    guard(|| {
        let l = run_logits(model, patches, count)?;
        if labels.is_null() {
            return Err(HsmFail::Null("labels"));
        }
        for (i, k) in argmax_rows(&l).into_iter().enumerate() {
            *labels.add(i) = k as u32;
        }
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn hsm_model_free(model: *mut HsmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
