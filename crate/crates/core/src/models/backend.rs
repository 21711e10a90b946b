use std::fmt;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Dense row-major f32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, ModelError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(ModelError::ShapeMismatch {
                expected: shape,
                got: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn from_f64(shape: Vec<usize>, values: &[f64]) -> Result<Self, ModelError> {
        Self::new(shape, values.iter().map(|&v| v as f32).collect())
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Wire form: u32 LE rank, u32 LE dims, f32 LE data.
    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.shape.len() + 4 * self.data.len());
        out.extend((self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend((d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend(v.to_le_bytes());
        }
        out
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, ModelError> {
        let bad = || ModelError::InferenceFailure("malformed tensor stream".into());
        let word = |i: usize| -> Option<[u8; 4]> { bytes.get(i * 4..i * 4 + 4).map(|b| b.try_into().unwrap()) };
        let rank = u32::from_le_bytes(word(0).ok_or_else(bad)?) as usize;
        if rank > 8 {
            return Err(bad());
        }
        let shape: Vec<usize> = (0..rank)
            .map(|i| word(1 + i).map(|w| u32::from_le_bytes(w) as usize))
            .collect::<Option<_>>()
            .ok_or_else(bad)?;
        let n: usize = shape.iter().product();
        let body = &bytes[4 * (1 + rank)..];
        if body.len() != 4 * n {
            return Err(bad());
        }
        let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { shape, data })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Segmentation,
    ImageClassifier,
    SuperResolution,
    FeatureExtractor,
    Mock,
}

/// Whether a backend tolerates concurrent `run` calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concurrency {
    Concurrent,
    Serialized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub id: String,
    pub kind: BackendKind,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub concurrency: Concurrency,
}

pub trait ModelBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;
    fn run(&self, input: &Tensor) -> Result<Tensor, ModelError>;
    /// Number of `run` invocations so far.
    fn calls(&self) -> usize {
        0
    }
    /// Cheap reachability check used by health reporting.
    fn probe(&self) -> Result<(), String> {
        Ok(())
    }
}

/// Shared handle to a backend. Backends that declare
/// [`Concurrency::Serialized`] are run under a per-handle lock.
#[derive(Clone)]
pub struct ModelBackendHandle {
    backend: Arc<dyn ModelBackend>,
    lock: Option<Arc<Mutex<()>>>,
}

impl ModelBackendHandle {
    pub fn new<B: ModelBackend + 'static>(backend: B) -> Self {
        let lock = (backend.descriptor().concurrency == Concurrency::Serialized).then(|| Arc::new(Mutex::new(())));
        Self {
            backend: Arc::new(backend),
            lock,
        }
    }

    pub fn descriptor(&self) -> &BackendDescriptor {
        self.backend.descriptor()
    }

    pub fn calls(&self) -> usize {
        self.backend.calls()
    }

    pub fn probe(&self) -> Result<(), String> {
        self.backend.probe()
    }
}

impl fmt::Debug for ModelBackendHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("ModelBackendHandle").field(self.descriptor()).finish()
    }
}

/// Checks the input against the declared contract, runs the backend and
/// checks the output.
pub fn run_inference(handle: &ModelBackendHandle, input: &Tensor) -> Result<Tensor, ModelError> {
    let d = handle.descriptor();
    if input.shape != d.input_shape || input.data.len() != input.shape.iter().product::<usize>() {
        return Err(ModelError::ShapeMismatch {
            expected: d.input_shape.clone(),
            got: input.shape.clone(),
        });
    }
    let out = match &handle.lock {
        Some(lock) => {
            let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
            handle.backend.run(input)?
        }
        None => handle.backend.run(input)?,
    };
    if out.shape != d.output_shape || out.data.len() != out.shape.iter().product::<usize>() {
        return Err(ModelError::InferenceFailure(format!(
            "backend {} returned shape {:?}, declared {:?}",
            d.id, out.shape, d.output_shape
        )));
    }
    if out.data.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::InferenceFailure(format!("backend {} returned non-finite values", d.id)));
    }
    Ok(out)
}

fn descriptor(id: &str, kind: BackendKind, input: Vec<usize>, output: Vec<usize>) -> BackendDescriptor {
    BackendDescriptor {
        id: id.into(),
        kind,
        input_shape: input,
        output_shape: output,
        concurrency: Concurrency::Concurrent,
    }
}

/// Ellipse geometry of [`MockSegmentation`], in pixels of the square input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockLungGeometry {
    pub left_center: [f64; 2],
    pub right_center: [f64; 2],
    pub semi_axes: [f64; 2],
    pub probability: f64,
}

impl Default for MockLungGeometry {
    fn default() -> Self {
        Self {
            left_center: [170.0, 260.0],
            right_center: [342.0, 260.0],
            semi_axes: [80.0, 180.0],
            probability: 0.9,
        }
    }
}

/// Two fixed ellipses of probability `p · g`, where the gate
/// `g = clamp(20 · mean(input), 0, 1)` makes a black input yield an empty map.
pub struct MockSegmentation {
    desc: BackendDescriptor,
    geometry: MockLungGeometry,
    calls: AtomicUsize,
}

impl MockSegmentation {
    pub fn new(size: usize) -> Self {
        Self::with_geometry(size, MockLungGeometry::default())
    }

    pub fn with_geometry(size: usize, geometry: MockLungGeometry) -> Self {
        Self {
            desc: descriptor("mock-segmentation", BackendKind::Segmentation, vec![size, size], vec![size, size]),
            geometry,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn probability_at(&self, x: usize, y: usize, gate: f64) -> f64 {
        let g = &self.geometry;
        let (px, py) = (x as f64, y as f64);
        let inside = [g.left_center, g.right_center].iter().any(|c| {
            let dx = (px - c[0]) / g.semi_axes[0];
            let dy = (py - c[1]) / g.semi_axes[1];
            dx * dx + dy * dy <= 1.0
        });
        if inside {
            g.probability * gate
        } else {
            0.0
        }
    }
}

impl ModelBackend for MockSegmentation {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    fn run(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mean = input.data.iter().map(|&v| v as f64).sum::<f64>() / input.data.len().max(1) as f64;
        let gate = (20.0 * mean).clamp(0.0, 1.0);
        let (w, h) = (input.shape[1], input.shape[0]);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(self.probability_at(x, y, gate) as f32);
            }
        }
        Ok(Tensor {
            shape: vec![h, w],
            data,
        })
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Splits rows into three bands of `⌊H/3⌋, ⌊H/3⌋` and the remainder.
fn band_ranges(h: usize) -> [std::ops::Range<usize>; 3] {
    let b = h / 3;
    [0..b, b..2 * b, 2 * b..h]
}

fn softmax(z: [f64; 3]) -> [f64; 3] {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = z.map(|v| (v - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// Softmax of the mean input value in the top, middle and bottom bands,
/// ordered (normal, pneumonia, covid).
pub struct MockClassifier {
    desc: BackendDescriptor,
    calls: AtomicUsize,
}

impl MockClassifier {
    pub fn new(size: usize) -> Self {
        Self {
            desc: descriptor("mock-classifier", BackendKind::ImageClassifier, vec![size, size], vec![3]),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn band_means(input: &Tensor) -> [f64; 3] {
        let (h, w) = (input.shape[0], input.shape[1]);
        band_ranges(h).map(|r| {
            let n = (r.len() * w).max(1) as f64;
            input.data[r.start * w..r.end * w].iter().map(|&v| v as f64).sum::<f64>() / n
        })
    }
}

impl ModelBackend for MockClassifier {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    fn run(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let p = softmax(Self::band_means(input));
        Tensor::from_f64(vec![3], &p)
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Means of `width` equal-as-possible column bands of the input.
pub struct MockFeatureExtractor {
    desc: BackendDescriptor,
    calls: AtomicUsize,
}

pub const NEURAL_FEATURE_WIDTH: usize = 261;

impl MockFeatureExtractor {
    pub fn new(size: usize) -> Self {
        Self {
            desc: descriptor(
                "mock-feature-extractor",
                BackendKind::FeatureExtractor,
                vec![size, size],
                vec![NEURAL_FEATURE_WIDTH],
            ),
            calls: AtomicUsize::new(0),
        }
    }
}

impl ModelBackend for MockFeatureExtractor {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    fn run(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let (h, w) = (input.shape[0], input.shape[1]);
        let k = NEURAL_FEATURE_WIDTH;
        let mut sums = vec![0.0f64; k];
        let mut counts = vec![0usize; k];
        for y in 0..h {
            for x in 0..w {
                let band = x * k / w;
                sums[band] += input.data[y * w + x] as f64;
                counts[band] += 1;
            }
        }
        let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
        Tensor::from_f64(vec![k], &means)
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Bilinear ×2 upscaling of one patch.
pub struct MockSuperResolution {
    desc: BackendDescriptor,
    calls: AtomicUsize,
}

impl MockSuperResolution {
    pub fn new(patch: usize) -> Self {
        Self {
            desc: descriptor(
                "mock-super-resolution",
                BackendKind::SuperResolution,
                vec![patch, patch],
                vec![2 * patch, 2 * patch],
            ),
            calls: AtomicUsize::new(0),
        }
    }
}

impl ModelBackend for MockSuperResolution {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    fn run(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let (h, w) = (input.shape[0], input.shape[1]);
        let img = crate::imaging::RasterImage::from_clamped(w, h, input.to_f64());
        let up = crate::imaging::resize_exact(&img, 2 * w, 2 * h);
        Tensor::from_f64(vec![2 * h, 2 * w], up.pixels())
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

type BackendFn = dyn Fn(&Tensor) -> Result<Tensor, ModelError> + Send + Sync;

/// Backend defined by a closure.
pub struct FnBackend {
    desc: BackendDescriptor,
    f: Box<BackendFn>,
    calls: AtomicUsize,
}

impl FnBackend {
    pub fn new<F>(desc: BackendDescriptor, f: F) -> Self
    where
        F: Fn(&Tensor) -> Result<Tensor, ModelError> + Send + Sync + 'static,
    {
        Self {
            desc,
            f: Box::new(f),
            calls: AtomicUsize::new(0),
        }
    }
}

impl ModelBackend for FnBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    fn run(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        (self.f)(input)
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Runs an external command per call. The input tensor is written to its
/// stdin in wire form and the output tensor is read from its stdout.
pub struct ProcessBackend {
    desc: BackendDescriptor,
    program: PathBuf,
    args: Vec<String>,
    calls: AtomicUsize,
}

impl ProcessBackend {
    pub fn new(desc: BackendDescriptor, program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Self {
            desc,
            program: program.into(),
            args,
            calls: AtomicUsize::new(0),
        }
    }
}

impl ModelBackend for ProcessBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    fn run(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| ModelError::BackendUnavailable(format!("{}: {e}", self.program.display())))?;
        let wire = input.to_wire();
        let mut stdin = child.stdin.take().expect("piped stdin");
        let writer = std::thread::spawn(move || stdin.write_all(&wire));
        let mut out = Vec::new();
        child
            .stdout
            .take()
            .expect("piped stdout")
            .read_to_end(&mut out)
            .map_err(|e| ModelError::InferenceFailure(e.to_string()))?;
        let status = child.wait().map_err(|e| ModelError::InferenceFailure(e.to_string()))?;
        writer
            .join()
            .map_err(|_| ModelError::InferenceFailure("stdin writer panicked".into()))?
            .map_err(|e| ModelError::InferenceFailure(format!("writing input: {e}")))?;
        if !status.success() {
            let mut err = String::new();
            if let Some(mut s) = child.stderr.take() {
                let _ = s.read_to_string(&mut err);
            }
            return Err(ModelError::InferenceFailure(format!("{status}: {}", err.trim())));
        }
        Tensor::from_wire(&out)
    }

    fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn probe(&self) -> Result<(), String> {
        let found = if self.program.components().count() > 1 {
            self.program.is_file()
        } else {
            std::env::var_os("PATH")
                .is_some_and(|paths| std::env::split_paths(&paths).any(|d| d.join(&self.program).is_file()))
        };
        if found {
            Ok(())
        } else {
            Err(format!("program {} not found", self.program.display()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(size: usize) -> Tensor {
        let data = (0..size * size).map(|i| (i / size) as f32 / size as f32).collect();
        Tensor::new(vec![size, size], data).unwrap()
    }

    #[test]
    fn mock_segmentation_draws_two_ellipses() {
        let h = ModelBackendHandle::new(MockSegmentation::new(512));
        let out = run_inference(&h, &Tensor::new(vec![512, 512], vec![0.5; 512 * 512]).unwrap()).unwrap();
        let at = |x: usize, y: usize| out.data[y * 512 + x];
        assert_eq!(at(170, 260), 0.9);
        assert_eq!(at(342, 260), 0.9);
        assert_eq!(at(256, 260), 0.0);
        assert_eq!(at(170, 79), 0.0);
        assert_eq!(at(170, 80), 0.9);
        assert_eq!(at(5, 5), 0.0);
        // area of each ellipse is close to pi*a*b
        let n = out.data.iter().filter(|&&v| v > 0.0).count() as f64;
        assert!((n - 2.0 * std::f64::consts::PI * 80.0 * 180.0).abs() / n < 0.01);
        assert_eq!(h.calls(), 1);
    }

    #[test]
    fn mock_segmentation_black_input_is_empty() {
        let h = ModelBackendHandle::new(MockSegmentation::new(64));
        let out = run_inference(&h, &Tensor::zeros(vec![64, 64])).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mock_classifier_is_softmax_of_band_means() {
        let h = ModelBackendHandle::new(MockClassifier::new(9));
        let t = ramp(9);
        let out = run_inference(&h, &t).unwrap();
        // rows 0..3 have means 1/9, 4/9, 7/9
        let z = [1.0 / 9.0, 4.0 / 9.0, 7.0 / 9.0];
        let e: Vec<f64> = z.iter().map(|v: &f64| v.exp()).collect();
        let s: f64 = e.iter().sum();
        for (o, ei) in out.data.iter().zip(&e) {
            assert!((*o as f64 - ei / s).abs() < 1e-6);
        }
    }

    #[test]
    fn feature_extractor_has_declared_width() {
        let h = ModelBackendHandle::new(MockFeatureExtractor::new(512));
        let out = run_inference(&h, &ramp(512)).unwrap();
        assert_eq!(out.shape, vec![261]);
        // every column band of a vertical ramp has the same mean
        assert!(out.data.iter().all(|&v| (v - out.data[0]).abs() < 1e-6));
    }

    #[test]
    fn super_resolution_doubles_patch() {
        let h = ModelBackendHandle::new(MockSuperResolution::new(50));
        let out = run_inference(&h, &Tensor::new(vec![50, 50], vec![0.25; 2500]).unwrap()).unwrap();
        assert_eq!(out.shape, vec![100, 100]);
        assert!(out.data.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let h = ModelBackendHandle::new(MockClassifier::new(512));
        let err = run_inference(&h, &Tensor::zeros(vec![256, 256])).unwrap_err();
        assert!(matches!(err, ModelError::ShapeMismatch { .. }));
        assert_eq!(h.calls(), 0);
    }

    #[test]
    fn bad_backend_output_is_an_inference_failure() {
        let d = descriptor("bad", BackendKind::Mock, vec![2], vec![3]);
        let h = ModelBackendHandle::new(FnBackend::new(d, |_| Ok(Tensor::zeros(vec![4]))));
        let err = run_inference(&h, &Tensor::zeros(vec![2])).unwrap_err();
        assert!(matches!(err, ModelError::InferenceFailure(_)));
    }

    #[test]
    fn wire_roundtrip() {
        let t = Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.0, 0.0, 1e-8, 7.0]).unwrap();
        assert_eq!(Tensor::from_wire(&t.to_wire()).unwrap(), t);
        assert!(Tensor::from_wire(&[1, 0, 0]).is_err());
    }

    #[test]
    fn process_backend_echo() {
        let d = descriptor("echo", BackendKind::Mock, vec![4, 4], vec![4, 4]);
        let h = ModelBackendHandle::new(ProcessBackend::new(d, "cat", vec![]));
        assert!(h.probe().is_ok());
        let t = ramp(4);
        assert_eq!(run_inference(&h, &t).unwrap(), t);
    }

    #[test]
    fn process_backend_missing_program() {
        let d = descriptor("none", BackendKind::Mock, vec![1], vec![1]);
        let h = ModelBackendHandle::new(ProcessBackend::new(d, "/nonexistent/backend", vec![]));
        assert!(h.probe().is_err());
        let err = run_inference(&h, &Tensor::zeros(vec![1])).unwrap_err();
        assert!(matches!(err, ModelError::BackendUnavailable(_)));
    }

    #[test]
    fn serialized_backends_never_overlap() {
        use std::sync::atomic::AtomicBool;
        let mut d = descriptor("slow", BackendKind::Mock, vec![1], vec![1]);
        d.concurrency = Concurrency::Serialized;
        let busy = Arc::new(AtomicBool::new(false));
        let b = busy.clone();
        let h = ModelBackendHandle::new(FnBackend::new(d, move |t| {
            assert!(!b.swap(true, Ordering::SeqCst), "overlapping calls");
            std::thread::sleep(std::time::Duration::from_millis(5));
            b.store(false, Ordering::SeqCst);
            Ok(t.clone())
        }));
        let threads: Vec<_> = (0..4)
            .map(|_| {
                let h = h.clone();
                std::thread::spawn(move || {
                    for _ in 0..5 {
                        run_inference(&h, &Tensor::zeros(vec![1])).unwrap();
                    }
                })
            })
            .collect();
        for t in threads {
            t.join().unwrap();
        }
        assert_eq!(h.calls(), 20);
    }
}
