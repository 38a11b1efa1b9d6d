//! Kernel launch captures: everything needed to replay one launch offline.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! "KLCAP1" | version: u32 | metadata length: u64 | metadata (canonical JSON)
//! | zero padding to a 64-byte boundary | payloads, each at a 64-byte aligned
//! offset relative to the start of the payload section
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kerneldef::{DefinitionError, DefinitionFile, KernelDefinition, ProblemSize, ScalarArgs};

pub const MAGIC: &[u8; 6] = b"KLCAP1";
pub const FORMAT_VERSION: u32 = 1;
pub const EXTENSION: &str = "klcap";
pub const ALIGNMENT: usize = 64;
const HEADER_LEN: usize = 6 + 4 + 8;
const MAX_METADATA_LEN: u64 = 1 << 26;

pub const CAPTURE_ENV: &str = "KERNEL_LAUNCHER_CAPTURE";
pub const CAPTURE_DIR_ENV: &str = "KERNEL_LAUNCHER_CAPTURE_DIR";

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a capture file (bad magic)")]
    BadMagic,
    #[error("unsupported capture format version {0}")]
    Version(u32),
    #[error("capture file is truncated")]
    Truncated,
    #[error("capture file has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("malformed capture metadata: {0}")]
    Metadata(String),
    #[error("checksum mismatch in buffer at argument {position}: stored {stored:08x}, computed {computed:08x}")]
    Checksum {
        position: usize,
        stored: u32,
        computed: u32,
    },
    #[error("buffer at argument {position}: {bytes} bytes is not a whole number of {element_type:?} elements")]
    PayloadLength {
        position: usize,
        bytes: usize,
        element_type: ElementType,
    },
    #[error("scalar at argument {position} does not fit type {element_type:?}")]
    ScalarType {
        position: usize,
        element_type: ElementType,
    },
    #[error("argument positions must be 0..{0} without gaps or repeats")]
    Positions(usize),
    #[error(transparent)]
    Definition(#[from] DefinitionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementType {
    F32,
    F64,
    I8,
    I16,
    I32,
    I64,
    U8,
    U16,
    U32,
    U64,
}

impl ElementType {
    pub fn size(self) -> usize {
        use ElementType::*;
        match self {
            I8 | U8 => 1,
            I16 | U16 => 2,
            F32 | I32 | U32 => 4,
            F64 | I64 | U64 => 8,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, ElementType::F32 | ElementType::F64)
    }

    fn int_range(self) -> (i128, i128) {
        use ElementType::*;
        match self {
            I8 => (i8::MIN as i128, i8::MAX as i128),
            I16 => (i16::MIN as i128, i16::MAX as i128),
            I32 => (i32::MIN as i128, i32::MAX as i128),
            I64 => (i64::MIN as i128, i64::MAX as i128),
            U8 => (0, u8::MAX as i128),
            U16 => (0, u16::MAX as i128),
            U32 => (0, u32::MAX as i128),
            U64 | F32 | F64 => (0, i64::MAX as i128),
        }
    }
}

/// Rust element types that can back a buffer argument.
pub trait Element: Copy {
    const TYPE: ElementType;
    fn extend_le(self, out: &mut Vec<u8>);
}

macro_rules! element {
    ($t:ty, $v:ident) => {
        impl Element for $t {
            const TYPE: ElementType = ElementType::$v;
            fn extend_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
        }
    };
}

element!(f32, F32);
element!(f64, F64);
element!(i8, I8);
element!(i16, I16);
element!(i32, I32);
element!(i64, I64);
element!(u8, U8);
element!(u16, U16);
element!(u32, U32);
element!(u64, U64);

pub fn to_le_bytes<T: Element>(values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * T::TYPE.size());
    values.iter().for_each(|v| v.extend_le(&mut out));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BufferRole {
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarValue {
    Int(i64),
    Float(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarArg {
    pub position: usize,
    #[serde(rename = "type")]
    pub element_type: ElementType,
    pub value: ScalarValue,
}

impl ScalarArg {
    fn validate(&self) -> Result<(), CaptureError> {
        let ok = match self.value {
            ScalarValue::Float(v) => self.element_type.is_float() && v.is_finite(),
            ScalarValue::Int(v) => {
                let (lo, hi) = self.element_type.int_range();
                !self.element_type.is_float() && (lo..=hi).contains(&(v as i128))
            }
        };
        if ok {
            Ok(())
        } else {
            Err(CaptureError::ScalarType {
                position: self.position,
                element_type: self.element_type,
            })
        }
    }
}

/// A buffer argument with its contents at launch time.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    pub position: usize,
    pub role: BufferRole,
    pub element_type: ElementType,
    pub data: Vec<u8>,
}

impl Buffer {
    pub fn element_count(&self) -> usize {
        self.data.len() / self.element_type.size()
    }

    pub fn checksum(&self) -> u32 {
        crc32fast::hash(&self.data)
    }
}

/// One argument of a kernel launch, in signature order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelArg<'a> {
    Scalar {
        element_type: ElementType,
        value: ScalarValue,
    },
    Buffer {
        role: BufferRole,
        element_type: ElementType,
        data: &'a [u8],
    },
}

impl<'a> KernelArg<'a> {
    pub fn int(element_type: ElementType, value: i64) -> Self {
        KernelArg::Scalar {
            element_type,
            value: ScalarValue::Int(value),
        }
    }

    pub fn i32(value: i32) -> Self {
        Self::int(ElementType::I32, value as i64)
    }

    pub fn float(element_type: ElementType, value: f64) -> Self {
        KernelArg::Scalar {
            element_type,
            value: ScalarValue::Float(value),
        }
    }

    pub fn input(element_type: ElementType, data: &'a [u8]) -> Self {
        KernelArg::Buffer {
            role: BufferRole::Input,
            element_type,
            data,
        }
    }

    pub fn output(element_type: ElementType, data: &'a [u8]) -> Self {
        KernelArg::Buffer {
            role: BufferRole::Output,
            element_type,
            data,
        }
    }
}

/// Integer scalars of a launch, bound as `argN` for expression evaluation.
pub fn scalar_args(args: &[KernelArg<'_>]) -> ScalarArgs {
    args.iter()
        .enumerate()
        .filter_map(|(i, a)| match a {
            KernelArg::Scalar {
                value: ScalarValue::Int(v),
                ..
            } => Some((i, *v)),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureMetadata {
    pub application: String,
    pub timestamp: String,
    pub format_version: u32,
}

impl CaptureMetadata {
    pub fn now(application: &str) -> Self {
        CaptureMetadata {
            application: application.to_string(),
            timestamp: now_iso8601(),
            format_version: FORMAT_VERSION,
        }
    }
}

pub fn now_iso8601() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    pub definition: KernelDefinition,
    pub problem: ProblemSize,
    pub scalars: Vec<ScalarArg>,
    pub buffers: Vec<Buffer>,
    pub metadata: CaptureMetadata,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BufferEntry {
    position: usize,
    role: BufferRole,
    element_type: ElementType,
    element_count: u64,
    offset: u64,
    length: u64,
    checksum: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetadataBlock {
    application: String,
    timestamp: String,
    format_version: u32,
    definition: DefinitionFile,
    problem: ProblemSize,
    scalars: Vec<ScalarArg>,
    buffers: Vec<BufferEntry>,
}

fn align_up(n: usize) -> usize {
    n.div_ceil(ALIGNMENT) * ALIGNMENT
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CaptureError + '_ {
    move |source| CaptureError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Capture {
    /// Snapshots a launch. The problem size is derived from the arguments.
    pub fn from_launch(
        definition: &KernelDefinition,
        args: &[KernelArg<'_>],
        metadata: CaptureMetadata,
    ) -> Result<Self, CaptureError> {
        let problem = definition.derive_problem_size(&scalar_args(args))?;
        let mut scalars = Vec::new();
        let mut buffers = Vec::new();
        for (position, arg) in args.iter().enumerate() {
            match *arg {
                KernelArg::Scalar {
                    element_type,
                    value,
                } => scalars.push(ScalarArg {
                    position,
                    element_type,
                    value,
                }),
                KernelArg::Buffer {
                    role,
                    element_type,
                    data,
                } => buffers.push(Buffer {
                    position,
                    role,
                    element_type,
                    data: data.to_vec(),
                }),
            }
        }
        let capture = Capture {
            definition: definition.clone(),
            problem,
            scalars,
            buffers,
            metadata,
        };
        capture.validate()?;
        Ok(capture)
    }

    pub fn validate(&self) -> Result<(), CaptureError> {
        let n = self.scalars.len() + self.buffers.len();
        let mut seen = vec![false; n];
        let positions = self
            .scalars
            .iter()
            .map(|s| s.position)
            .chain(self.buffers.iter().map(|b| b.position));
        for p in positions {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(CaptureError::Positions(n));
            }
        }
        for s in &self.scalars {
            s.validate()?;
        }
        for b in &self.buffers {
            if b.data.len() % b.element_type.size() != 0 {
                return Err(CaptureError::PayloadLength {
                    position: b.position,
                    bytes: b.data.len(),
                    element_type: b.element_type,
                });
            }
        }
        Ok(())
    }

    pub fn scalar_args(&self) -> ScalarArgs {
        self.scalars
            .iter()
            .filter_map(|s| match s.value {
                ScalarValue::Int(v) => Some((s.position, v)),
                ScalarValue::Float(_) => None,
            })
            .collect()
    }

    /// Arguments in signature order, borrowing the stored payloads.
    pub fn kernel_args(&self) -> Vec<KernelArg<'_>> {
        let mut args: Vec<(usize, KernelArg<'_>)> = self
            .scalars
            .iter()
            .map(|s| {
                (
                    s.position,
                    KernelArg::Scalar {
                        element_type: s.element_type,
                        value: s.value,
                    },
                )
            })
            .chain(self.buffers.iter().map(|b| {
                (
                    b.position,
                    KernelArg::Buffer {
                        role: b.role,
                        element_type: b.element_type,
                        data: &b.data,
                    },
                )
            }))
            .collect();
        args.sort_by_key(|(p, _)| *p);
        args.into_iter().map(|(_, a)| a).collect()
    }

    pub fn payload_bytes(&self) -> usize {
        self.buffers.iter().map(|b| b.data.len()).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CaptureError> {
        self.validate()?;
        let mut offset = 0usize;
        let mut entries = Vec::with_capacity(self.buffers.len());
        for b in &self.buffers {
            offset = align_up(offset);
            entries.push(BufferEntry {
                position: b.position,
                role: b.role,
                element_type: b.element_type,
                element_count: b.element_count() as u64,
                offset: offset as u64,
                length: b.data.len() as u64,
                checksum: b.checksum(),
            });
            offset += b.data.len();
        }
        let meta = MetadataBlock {
            application: self.metadata.application.clone(),
            timestamp: self.metadata.timestamp.clone(),
            format_version: self.metadata.format_version,
            definition: self.definition.to_file(),
            problem: self.problem.clone(),
            scalars: self.scalars.clone(),
            buffers: entries,
        };
        let meta_text = crate::canonical::to_string(&meta);
        let data_start = align_up(HEADER_LEN + meta_text.len());

        let mut out = Vec::with_capacity(data_start + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta_text.len() as u64).to_le_bytes());
        out.extend_from_slice(meta_text.as_bytes());
        for (b, e) in self.buffers.iter().zip(&meta.buffers) {
            out.resize(data_start + e.offset as usize, 0);
            out.extend_from_slice(&b.data);
        }
        out.resize(out.len().max(data_start), 0);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CaptureError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CaptureError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(CaptureError::Truncated);
        }
        let version = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CaptureError::Version(version));
        }
        let meta_len = u64::from_le_bytes(bytes[10..18].try_into().expect("8 bytes"));
        if meta_len > MAX_METADATA_LEN || HEADER_LEN + meta_len as usize > bytes.len() {
            return Err(CaptureError::Truncated);
        }
        let meta_end = HEADER_LEN + meta_len as usize;
        let meta: MetadataBlock = serde_json::from_slice(&bytes[HEADER_LEN..meta_end])
            .map_err(|e| CaptureError::Metadata(e.to_string()))?;
        if meta.format_version != version {
            return Err(CaptureError::Metadata(format!(
                "metadata version {} disagrees with header version {version}",
                meta.format_version
            )));
        }
        let data_start = align_up(meta_end);
        let mut end = data_start.min(bytes.len());
        let mut buffers = Vec::with_capacity(meta.buffers.len());
        for e in &meta.buffers {
            let start = data_start
                .checked_add(e.offset as usize)
                .ok_or(CaptureError::Truncated)?;
            let stop = start
                .checked_add(e.length as usize)
                .ok_or(CaptureError::Truncated)?;
            if stop > bytes.len() {
                return Err(CaptureError::Truncated);
            }
            if e.offset as usize % ALIGNMENT != 0
                || e.length != e.element_count * e.element_type.size() as u64
            {
                return Err(CaptureError::Metadata(format!(
                    "inconsistent layout for buffer at argument {}",
                    e.position
                )));
            }
            let data = bytes[start..stop].to_vec();
            let computed = crc32fast::hash(&data);
            if computed != e.checksum {
                return Err(CaptureError::Checksum {
                    position: e.position,
                    stored: e.checksum,
                    computed,
                });
            }
            end = end.max(stop);
            buffers.push(Buffer {
                position: e.position,
                role: e.role,
                element_type: e.element_type,
                data,
            });
        }
        if bytes.len() < end {
            return Err(CaptureError::Truncated);
        }
        if bytes.len() > end {
            return Err(CaptureError::TrailingBytes(bytes.len() - end));
        }
        let capture = Capture {
            definition: meta.definition.into_definition()?,
            problem: meta.problem,
            scalars: meta.scalars,
            buffers,
            metadata: CaptureMetadata {
                application: meta.application,
                timestamp: meta.timestamp,
                format_version: meta.format_version,
            },
        };
        capture.validate()?;
        Ok(capture)
    }

    /// Writes through a temporary file in the destination directory and
    /// renames it into place.
    pub fn write(&self, path: &Path) -> Result<(), CaptureError> {
        let bytes = self.to_bytes()?;
        crate::fsutil::write_atomic(path, &bytes).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, CaptureError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes)
    }
}

/// Which kernels to capture and where the files go.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CapturePolicy {
    kernels: HashSet<String>,
    directory: PathBuf,
}

impl CapturePolicy {
    pub fn new<S: AsRef<str>>(kernels: &[S], directory: impl Into<PathBuf>) -> Self {
        CapturePolicy {
            kernels: kernels.iter().map(|k| k.as_ref().to_string()).collect(),
            directory: directory.into(),
        }
    }

    /// `list` is the comma-separated value of `KERNEL_LAUNCHER_CAPTURE`.
    pub fn parse(list: Option<&str>, directory: Option<&str>) -> Self {
        let kernels = list
            .unwrap_or_default()
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        CapturePolicy {
            kernels,
            directory: PathBuf::from(directory.unwrap_or(".")),
        }
    }

    pub fn from_env() -> Self {
        let list = std::env::var(CAPTURE_ENV).ok();
        let dir = std::env::var(CAPTURE_DIR_ENV).ok();
        Self::parse(list.as_deref(), dir.as_deref())
    }

    pub fn should_capture(&self, kernel_name: &str) -> bool {
        self.kernels.contains(kernel_name)
    }

    pub fn directory(&self) -> &Path {
        &self.directory
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }
}

pub fn capture_file_name(kernel_name: &str, problem: &ProblemSize) -> String {
    let safe: String = kernel_name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect();
    format!("{safe}_{problem}.{EXTENSION}")
}

/// Applies a policy to launches, capturing the first matching launch per
/// (kernel, problem size).
#[derive(Debug)]
pub struct Capturer {
    policy: CapturePolicy,
    application: String,
    done: Mutex<HashSet<(String, ProblemSize)>>,
}

impl Capturer {
    pub fn new(policy: CapturePolicy, application: &str) -> Self {
        Capturer {
            policy,
            application: application.to_string(),
            done: Mutex::new(HashSet::new()),
        }
    }

    pub fn policy(&self) -> &CapturePolicy {
        &self.policy
    }

    /// Returns the written path, or `None` when the launch is not captured.
    pub fn maybe_capture(
        &self,
        definition: &KernelDefinition,
        problem: &ProblemSize,
        args: &[KernelArg<'_>],
    ) -> Result<Option<PathBuf>, CaptureError> {
        if !self.policy.should_capture(definition.name()) {
            return Ok(None);
        }
        let key = (definition.name().to_string(), problem.clone());
        let mut done = self.done.lock().expect("capture set poisoned");
        if done.contains(&key) {
            return Ok(None);
        }
        let capture = Capture::from_launch(definition, args, CaptureMetadata::now(&self.application))?;
        let dir = self.policy.directory();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(capture_file_name(definition.name(), problem));
        capture.write(&path)?;
        log::info!("captured {} to {}", definition.name(), path.display());
        done.insert(key);
        Ok(Some(path))
    }
}

/// Lists `.klcap` files in a directory, sorted by name.
pub fn list_captures(dir: &Path) -> Result<Vec<PathBuf>, CaptureError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == EXTENSION))
        .collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kerneldef::{KernelBuilder, KernelSource};

    fn vector_add() -> KernelDefinition {
        KernelBuilder::new("vector_add", KernelSource::inline("__global__ void vector_add() {}"))
            .tune("block_size", [32i64, 64, 128, 256, 1024])
            .problem_size(&["arg3"])
            .template_args(&["block_size"])
            .block_size(&["block_size"])
            .build()
            .unwrap()
    }

    fn pinned_meta() -> CaptureMetadata {
        CaptureMetadata {
            application: "test".into(),
            timestamp: "2024-01-01T00:00:00Z".into(),
            format_version: FORMAT_VERSION,
        }
    }

    fn sample_capture() -> Capture {
        let a = to_le_bytes(&[1.0f32, 2.0, 3.0, 4.0]);
        let b = to_le_bytes(&[0.5f32; 4]);
        let c = vec![0u8; 16];
        let args = [
            KernelArg::output(ElementType::F32, &c),
            KernelArg::input(ElementType::F32, &a),
            KernelArg::input(ElementType::F32, &b),
            KernelArg::i32(4),
        ];
        Capture::from_launch(&vector_add(), &args, pinned_meta()).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let c = sample_capture();
        let bytes = c.to_bytes().unwrap();
        let back = Capture::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.problem.components(), [4]);
        assert_eq!(back.scalar_args().get(3), Some(4));
        assert_eq!(&bytes[..6], b"KLCAP1");
    }

    #[test]
    fn payloads_are_aligned() {
        let bytes = sample_capture().to_bytes().unwrap();
        let meta_len = u64::from_le_bytes(bytes[10..18].try_into().unwrap()) as usize;
        let data_start = align_up(HEADER_LEN + meta_len);
        // three 16-byte buffers at offsets 0, 64, 128
        assert_eq!(bytes.len(), data_start + 128 + 16);
        assert_eq!(&bytes[data_start + 64..data_start + 80], &to_le_bytes(&[1.0f32, 2.0, 3.0, 4.0])[..]);
    }

    #[test]
    fn empty_buffers_round_trip() {
        let args = [KernelArg::input(ElementType::F64, &[]), KernelArg::i32(1), KernelArg::i32(0), KernelArg::i32(1)];
        let c = Capture::from_launch(&vector_add(), &args, pinned_meta()).unwrap();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(Capture::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample_capture().to_bytes().unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        assert!(matches!(
            Capture::from_bytes(&bytes),
            Err(CaptureError::Checksum { position: 2, .. })
        ));
    }

    #[test]
    fn header_errors() {
        let bytes = sample_capture().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Capture::from_bytes(&bad), Err(CaptureError::BadMagic)));
        let mut bad = bytes.clone();
        bad[6] = 9;
        assert!(matches!(Capture::from_bytes(&bad), Err(CaptureError::Version(9))));
        assert!(matches!(
            Capture::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CaptureError::Truncated)
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Capture::from_bytes(&long), Err(CaptureError::TrailingBytes(1))));
    }

    #[test]
    fn float_scalars_and_integer_types() {
        let data = to_le_bytes(&[1u16, 2, 3]);
        let args = [
            KernelArg::input(ElementType::U16, &data),
            KernelArg::float(ElementType::F64, 0.1),
            KernelArg::int(ElementType::U8, 255),
            KernelArg::int(ElementType::I64, 3),
        ];
        let c = Capture::from_launch(&vector_add(), &args, pinned_meta()).unwrap();
        let back = Capture::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back.scalars[0].value, ScalarValue::Float(0.1));
        assert_eq!(back.kernel_args(), args);

        let bad = [KernelArg::int(ElementType::U8, 256), KernelArg::i32(1), KernelArg::i32(1), KernelArg::i32(1)];
        assert!(matches!(
            Capture::from_launch(&vector_add(), &bad, pinned_meta()),
            Err(CaptureError::ScalarType { position: 0, .. })
        ));
        let odd = [0u8; 3];
        let bad = [KernelArg::input(ElementType::F32, &odd), KernelArg::i32(1), KernelArg::i32(1), KernelArg::i32(1)];
        assert!(matches!(
            Capture::from_launch(&vector_add(), &bad, pinned_meta()),
            Err(CaptureError::PayloadLength { .. })
        ));
    }

    #[test]
    fn policy_matching() {
        let p = CapturePolicy::parse(Some("advec_u,diff_uvw"), None);
        assert!(p.should_capture("advec_u"));
        assert!(p.should_capture("diff_uvw"));
        assert!(!p.should_capture("advec"));
        assert!(!p.should_capture("ADVEC_U"));
        let unset = CapturePolicy::parse(None, None);
        assert!(unset.is_empty());
        assert!(!unset.should_capture("advec_u"));
        assert!(!unset.should_capture(""));
        let exact = CapturePolicy::parse(Some("advec_u"), Some("/tmp/x"));
        assert!(!exact.should_capture("advec"));
        assert_eq!(exact.directory(), Path::new("/tmp/x"));
    }

    #[test]
    fn capturer_writes_once_per_problem() {
        let dir = tempfile::tempdir().unwrap();
        let policy = CapturePolicy::new(&["vector_add"], dir.path());
        let capturer = Capturer::new(policy, "app");
        let def = vector_add();
        let data = to_le_bytes(&[1.0f32; 8]);
        let args = [
            KernelArg::output(ElementType::F32, &data),
            KernelArg::input(ElementType::F32, &data),
            KernelArg::input(ElementType::F32, &data),
            KernelArg::i32(8),
        ];
        let problem = def.derive_problem_size(&scalar_args(&args)).unwrap();
        let first = capturer.maybe_capture(&def, &problem, &args).unwrap();
        assert!(first.is_some());
        assert!(capturer.maybe_capture(&def, &problem, &args).unwrap().is_none());
        let listed = list_captures(dir.path()).unwrap();
        assert_eq!(listed, vec![dir.path().join("vector_add_8.klcap")]);
        let c = Capture::read(&listed[0]).unwrap();
        assert_eq!(c.definition, def);
    }

    #[test]
    fn repeated_capture_differs_only_in_timestamp() {
        let mut a = sample_capture();
        let mut b = sample_capture();
        a.metadata.timestamp = "2024-01-01T00:00:00Z".into();
        b.metadata.timestamp = "2025-06-30T12:34:56Z".into();
        let (ba, bb) = (a.to_bytes().unwrap(), b.to_bytes().unwrap());
        assert_eq!(ba.len(), bb.len());
        let differing: Vec<usize> = (0..ba.len()).filter(|&i| ba[i] != bb[i]).collect();
        let text = String::from_utf8_lossy(&ba);
        let ts = text.find("2024-01-01T00:00:00Z").unwrap();
        assert!(differing.iter().all(|&i| (ts..ts + 20).contains(&i)));
    }
}
