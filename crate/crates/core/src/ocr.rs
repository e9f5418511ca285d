//! Text recognition through external commands.
//!
//! Each image is expanded into variants (optional ×4 upscale, a sweep of
//! rotations), every variant is passed to the OCR command, and the most
//! confident reading is optionally sent to a correction command.
//!
//! OCR contract: `CMD <image-file>` prints one JSON line
//! `{"text": "...", "confidence": 0.0..1.0}` and exits 0.
//! Correction contract: `CMD <image-file>` reads the prompt on stdin and
//! prints the corrected text.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use image::{imageops, DynamicImage, ImageFormat, Rgba, RgbaImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const UPSCALE_BELOW: u32 = 200;
pub const UPSCALE_FACTOR: u32 = 4;
pub const MIN_ROTATION_STEP: u32 = 5;
pub const DEFAULT_ROTATION_STEP: u32 = 15;
pub const DEFAULT_MAX_ANGLE: u32 = 90;
pub const CORRECTION_PROMPT: &str = "Correct the following OCR extracted text: ";

#[derive(Debug, Error)]
pub enum OcrError {
    #[error("image dimensions must be positive, got {0}x{1}")]
    EmptyImage(u32, u32),
    #[error("rotation step {step} must be in [{min}, max angle {max}]", min = MIN_ROTATION_STEP)]
    RotationStep { step: u32, max: u32 },
    #[error("empty command line")]
    EmptyCommand,
    #[error("command {command:?} could not be started: {reason}")]
    CommandMissing {
        command: String,
        reason: String,
        stderr: String,
    },
    #[error("command {command:?} exited with {status}: {stderr}")]
    NonZeroExit {
        command: String,
        status: String,
        stderr: String,
    },
    #[error("command {command:?} returned malformed output ({reason}): {stdout:?}")]
    MalformedOutput {
        command: String,
        reason: String,
        stdout: String,
        stderr: String,
    },
    #[error("image {path}: {message}")]
    Image { path: String, message: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl OcrError {
    /// Captured standard error of the failing command, when there is one.
    pub fn stderr(&self) -> Option<&str> {
        match self {
            OcrError::CommandMissing { stderr, .. }
            | OcrError::NonZeroExit { stderr, .. }
            | OcrError::MalformedOutput { stderr, .. } => Some(stderr),
            _ => None,
        }
    }
}

/// An executable plus fixed leading arguments, e.g. `python3 ocr_wrapper.py`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalCommand {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

impl ExternalCommand {
    /// Splits on whitespace; no quoting.
    pub fn parse(line: &str) -> Result<Self, OcrError> {
        let mut parts = line.split_whitespace().map(String::from);
        let program = parts.next().ok_or(OcrError::EmptyCommand)?;
        Ok(Self {
            program,
            args: parts.collect(),
        })
    }

    fn display(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Runs with `extra` appended, feeding `stdin`. Returns stdout and stderr on exit 0.
    fn run(&self, extra: &[&Path], stdin: Option<&str>) -> Result<(String, String), OcrError> {
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args)
            .args(extra)
            .stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() })
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        let mut child = cmd.spawn().map_err(|e| OcrError::CommandMissing {
            command: self.display(),
            reason: e.to_string(),
            stderr: String::new(),
        })?;
        if let Some(input) = stdin {
            let mut pipe = child.stdin.take().expect("piped stdin");
            // a command that exits without reading closes the pipe; its status decides
            let _ = pipe.write_all(input.as_bytes());
        }
        let out = child.wait_with_output()?;
        let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
        if !out.status.success() {
            return Err(OcrError::NonZeroExit {
                command: self.display(),
                status: out.status.to_string(),
                stderr,
            });
        }
        match String::from_utf8(out.stdout) {
            Ok(stdout) => Ok((stdout, stderr)),
            Err(e) => Err(OcrError::MalformedOutput {
                command: self.display(),
                reason: "stdout is not UTF-8".into(),
                stdout: String::from_utf8_lossy(e.as_bytes()).into_owned(),
                stderr,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VariantSpec {
    /// Counterclockwise degrees; 0 is the original orientation.
    pub rotation_degrees: i32,
    pub upscaled: bool,
}

/// Variants for one image: `0, +step, -step, +2·step, …` up to `max_angle`,
/// all upscaled ×4 when the shorter side is under 200 px.
pub fn plan_preprocessing(
    width: u32,
    height: u32,
    step: u32,
    max_angle: u32,
) -> Result<Vec<VariantSpec>, OcrError> {
    if width == 0 || height == 0 {
        return Err(OcrError::EmptyImage(width, height));
    }
    if step < MIN_ROTATION_STEP || step > max_angle {
        return Err(OcrError::RotationStep {
            step,
            max: max_angle,
        });
    }
    let upscaled = width.min(height) < UPSCALE_BELOW;
    let mut out = vec![VariantSpec {
        rotation_degrees: 0,
        upscaled,
    }];
    let mut a = step;
    while a <= max_angle {
        for r in [a as i32, -(a as i32)] {
            out.push(VariantSpec {
                rotation_degrees: r,
                upscaled,
            });
        }
        a += step;
    }
    Ok(out)
}

/// Resampler for the ×4 upscale.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Upscaler {
    #[default]
    Bicubic,
    /// Invoked as `CMD <input> <output>`; must write the enlarged image to `<output>`.
    External(ExternalCommand),
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> OcrError {
    OcrError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn upscale(img: DynamicImage, up: &Upscaler, scratch: &Path) -> Result<DynamicImage, OcrError> {
    match up {
        Upscaler::Bicubic => Ok(img.resize_exact(
            img.width() * UPSCALE_FACTOR,
            img.height() * UPSCALE_FACTOR,
            imageops::FilterType::CatmullRom,
        )),
        Upscaler::External(cmd) => {
            let input = scratch.join("upscale_in.png");
            let output = scratch.join("upscale_out.png");
            img.save_with_format(&input, ImageFormat::Png)
                .map_err(|e| image_err(&input, e))?;
            cmd.run(&[&input, &output], None)?;
            image::open(&output).map_err(|e| image_err(&output, e))
        }
    }
}

/// Bilinear rotation about the centre onto an enlarged canvas; uncovered pixels are transparent black.
pub fn rotate_bilinear(src: &RgbaImage, degrees: f64) -> RgbaImage {
    let (w, h) = (src.width() as f64, src.height() as f64);
    let t = degrees.to_radians();
    let (s, c) = t.sin_cos();
    let nw = (w * c.abs() + h * s.abs() - 1e-9).ceil().max(1.0);
    let nh = (w * s.abs() + h * c.abs() - 1e-9).ceil().max(1.0);
    let (cx, cy) = (w / 2.0, h / 2.0);
    let (ncx, ncy) = (nw / 2.0, nh / 2.0);
    let mut out = RgbaImage::new(nw as u32, nh as u32);
    let px = |x: i64, y: i64| -> [f64; 4] {
        if x < 0 || y < 0 || x >= src.width() as i64 || y >= src.height() as i64 {
            [0.0; 4]
        } else {
            src.get_pixel(x as u32, y as u32).0.map(f64::from)
        }
    };
    for (ox, oy, p) in out.enumerate_pixels_mut() {
        // output pixel centre back into source coordinates (y grows downward)
        let dx = ox as f64 + 0.5 - ncx;
        let dy = oy as f64 + 0.5 - ncy;
        let sx = c * dx - s * dy + cx - 0.5;
        let sy = s * dx + c * dy + cy - 0.5;
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let (a, b, cc, d) = (px(x0, y0), px(x0 + 1, y0), px(x0, y0 + 1), px(x0 + 1, y0 + 1));
        let mut v = [0u8; 4];
        for k in 0..4 {
            let top = a[k] * (1.0 - fx) + b[k] * fx;
            let bot = cc[k] * (1.0 - fx) + d[k] * fx;
            v[k] = (top * (1.0 - fy) + bot * fy).round().clamp(0.0, 255.0) as u8;
        }
        *p = Rgba(v);
    }
    out
}

fn rotate(img: DynamicImage, degrees: i32) -> DynamicImage {
    match degrees.rem_euclid(360) {
        0 => img,
        90 => img.rotate270(),
        180 => img.rotate180(),
        270 => img.rotate90(),
        _ => DynamicImage::ImageRgba8(rotate_bilinear(&img.to_rgba8(), degrees as f64)),
    }
}

/// Applies a variant's transform; the original is returned untouched for the identity variant.
pub fn apply_variant(
    img: &DynamicImage,
    spec: &VariantSpec,
    up: &Upscaler,
    scratch: &Path,
) -> Result<DynamicImage, OcrError> {
    let mut out = img.clone();
    if spec.upscaled {
        out = upscale(out, up, scratch)?;
    }
    Ok(rotate(out, spec.rotation_degrees))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrVariantResult {
    pub rotation_degrees: i32,
    pub upscaled: bool,
    pub text: String,
    pub confidence: f64,
}

#[derive(Deserialize)]
struct OcrResponse {
    text: String,
    confidence: f64,
}

/// Parses the one-line OCR response.
pub fn parse_ocr_output(cmd: &str, stdout: &str, stderr: &str) -> Result<(String, f64), OcrError> {
    let malformed = |reason: &str| OcrError::MalformedOutput {
        command: cmd.to_string(),
        reason: reason.to_string(),
        stdout: stdout.to_string(),
        stderr: stderr.to_string(),
    };
    let mut lines = stdout.lines().filter(|l| !l.trim().is_empty());
    let line = lines.next().ok_or_else(|| malformed("no output"))?;
    if lines.next().is_some() {
        return Err(malformed("more than one line"));
    }
    let r: OcrResponse = serde_json::from_str(line).map_err(|e| malformed(&e.to_string()))?;
    if !(0.0..=1.0).contains(&r.confidence) {
        return Err(malformed("confidence outside [0, 1]"));
    }
    Ok((r.text, r.confidence))
}

/// OCR on the image file at `path` (already transformed).
pub fn run_ocr_file(path: &Path, cmd: &ExternalCommand) -> Result<(String, f64), OcrError> {
    let (stdout, stderr) = cmd.run(&[path], None)?;
    parse_ocr_output(&cmd.display(), &stdout, &stderr)
}

/// Transforms `image_path` per `spec`, runs the OCR command on the result and parses its reply.
pub fn run_ocr(
    image_path: &Path,
    spec: &VariantSpec,
    cmd: &ExternalCommand,
    up: &Upscaler,
) -> Result<OcrVariantResult, OcrError> {
    let img = image::open(image_path).map_err(|e| image_err(image_path, e))?;
    let scratch = tempfile::tempdir()?;
    run_variant(image_path, &img, spec, cmd, up, scratch.path())
}

fn run_variant(
    image_path: &Path,
    img: &DynamicImage,
    spec: &VariantSpec,
    cmd: &ExternalCommand,
    up: &Upscaler,
    scratch: &Path,
) -> Result<OcrVariantResult, OcrError> {
    let (text, confidence) = if spec.rotation_degrees == 0 && !spec.upscaled {
        run_ocr_file(image_path, cmd)?
    } else {
        let out = apply_variant(img, spec, up, scratch)?;
        let file = tempfile::Builder::new()
            .prefix("variant-")
            .suffix(".png")
            .tempfile_in(scratch)?;
        out.save_with_format(file.path(), ImageFormat::Png)
            .map_err(|e| image_err(file.path(), e))?;
        run_ocr_file(file.path(), cmd)?
    };
    Ok(OcrVariantResult {
        rotation_degrees: spec.rotation_degrees,
        upscaled: spec.upscaled,
        text,
        confidence,
    })
}

fn alnum(s: &str) -> usize {
    s.chars().filter(|c| c.is_alphanumeric()).count()
}

/// Highest confidence, then most alphanumeric characters, then smallest |rotation|.
/// Remaining ties prefer positive rotation, no upscale, then the lexicographically smaller text.
pub fn select_best(variants: &[OcrVariantResult]) -> Option<&OcrVariantResult> {
    variants.iter().min_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(alnum(&b.text).cmp(&alnum(&a.text)))
            .then(a.rotation_degrees.unsigned_abs().cmp(&b.rotation_degrees.unsigned_abs()))
            .then(b.rotation_degrees.cmp(&a.rotation_degrees))
            .then(a.upscaled.cmp(&b.upscaled))
            .then(a.text.cmp(&b.text))
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub text: String,
    /// Set when the command failed and the input was kept.
    pub warning: Option<String>,
}

/// Sends the correction prompt to `cmd`; falls back to `text` on any failure.
pub fn correct_text(text: &str, image_path: &Path, cmd: Option<&ExternalCommand>) -> Correction {
    let Some(cmd) = cmd else {
        return Correction {
            text: text.to_string(),
            warning: None,
        };
    };
    let prompt = format!("{CORRECTION_PROMPT}{text}");
    match cmd.run(&[image_path], Some(&prompt)) {
        Ok((out, _)) => Correction {
            text: out.trim_end_matches(['\n', '\r']).to_string(),
            warning: None,
        },
        Err(e) => {
            let warning = format!("correction failed, keeping OCR text: {e}");
            log::warn!("{}: {warning}", image_path.display());
            Correction {
                text: text.to_string(),
                warning: Some(warning),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcrConfig {
    pub ocr: ExternalCommand,
    #[serde(default)]
    pub correct: Option<ExternalCommand>,
    #[serde(default)]
    pub upscaler: Upscaler,
    pub rotation_step: u32,
    pub max_angle: u32,
    /// Concurrent OCR processes per image.
    pub workers: usize,
}

impl OcrConfig {
    pub fn new(ocr: ExternalCommand) -> Self {
        Self {
            ocr,
            correct: None,
            upscaler: Upscaler::Bicubic,
            rotation_step: DEFAULT_ROTATION_STEP,
            max_angle: DEFAULT_MAX_ANGLE,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrOutcome {
    pub image_id: String,
    pub best: OcrVariantResult,
    /// In plan order.
    pub all_variants: Vec<OcrVariantResult>,
    pub corrected_text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Runs every planned variant of one image through a bounded worker pool and picks the best.
pub fn process_image(image_id: &str, path: &Path, cfg: &OcrConfig) -> Result<OcrOutcome, OcrError> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let plan = plan_preprocessing(img.width(), img.height(), cfg.rotation_step, cfg.max_angle)?;
    let scratch = tempfile::tempdir()?;
    // upscale once; variants then only rotate
    let big_path = scratch.path().join("upscaled.png");
    let (src_path, src): (&Path, DynamicImage) = match plan.first() {
        Some(v) if v.upscaled => {
            let big = upscale(img, &cfg.upscaler, scratch.path())?;
            big.save_with_format(&big_path, ImageFormat::Png)
                .map_err(|e| image_err(&big_path, e))?;
            (&big_path, big)
        }
        _ => (path, img),
    };
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<OcrVariantResult, OcrError>>>> =
        Mutex::new((0..plan.len()).map(|_| None).collect());
    let workers = cfg.workers.clamp(1, plan.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(spec) = plan.get(i) else { break };
                let rotate_only = VariantSpec {
                    rotation_degrees: spec.rotation_degrees,
                    upscaled: false,
                };
                let r = run_variant(src_path, &src, &rotate_only, &cfg.ocr, &cfg.upscaler, scratch.path())
                .map(|mut r| {
                    r.upscaled = spec.upscaled;
                    r
                });
                let failed = r.is_err();
                slots.lock().expect("no poisoned workers")[i] = Some(r);
                if failed {
                    next.store(plan.len(), Ordering::Relaxed);
                }
            });
        }
    });
    let mut all = Vec::with_capacity(plan.len());
    for r in slots.into_inner().expect("no poisoned workers").into_iter().flatten() {
        all.push(r?);
    }
    let best = select_best(&all).expect("plan is never empty").clone();
    let correction = correct_text(&best.text, path, cfg.correct.as_ref());
    Ok(OcrOutcome {
        image_id: image_id.to_string(),
        best,
        all_variants: all,
        corrected_text: correction.text,
        warnings: correction.warning.into_iter().collect(),
    })
}
