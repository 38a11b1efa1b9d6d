use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use klaunch::capture::{
    list_captures, to_le_bytes, BufferRole, Capture, CaptureMetadata, ElementType, KernelArg,
    ScalarValue, CAPTURE_DIR_ENV,
};
use klaunch::kerneldef::KernelDefinition;
use serde_json::json;

use crate::config::{resolve_dir, CliConfig};
use crate::CaptureCommand;

pub fn run(cmd: CaptureCommand, config: &CliConfig) -> Result<()> {
    match cmd {
        CaptureCommand::Ls { dir, json } => {
            let dir = resolve_dir(dir, CAPTURE_DIR_ENV, config.capture_dir.as_ref())
                .unwrap_or_else(|| PathBuf::from("."));
            ls(&dir, json)
        }
        CaptureCommand::Show { file, json } => show(&file, json),
        CaptureCommand::Synth {
            definition,
            args,
            output,
            timestamp,
        } => synth(&definition, &args, &output, timestamp),
    }
}

fn read(path: &Path) -> Result<Capture> {
    Capture::read(path).with_context(|| format!("cannot read capture {}", path.display()))
}

fn ls(dir: &Path, json: bool) -> Result<()> {
    let files = list_captures(dir).with_context(|| format!("cannot list {}", dir.display()))?;
    let mut rows = Vec::new();
    for path in files {
        let c = read(&path)?;
        rows.push((path, c));
    }
    if json {
        let items: Vec<_> = rows
            .iter()
            .map(|(path, c)| {
                json!({
                    "file": path.display().to_string(),
                    "kernel": c.definition.name(),
                    "kernel_key": c.definition.kernel_key(),
                    "problem": c.problem,
                    "payload_bytes": c.payload_bytes(),
                    "timestamp": c.metadata.timestamp,
                })
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&items)?);
    } else {
        for (path, c) in &rows {
            let name = path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default();
            println!(
                "{name}\t{}\t{}\t{} bytes\t{}",
                c.definition.name(),
                c.problem,
                c.payload_bytes(),
                c.metadata.timestamp
            );
        }
    }
    Ok(())
}

fn show(path: &Path, json: bool) -> Result<()> {
    let c = read(path)?;
    let space = c.definition.space();
    if json {
        let buffers: Vec<_> = c
            .buffers
            .iter()
            .map(|b| {
                json!({
                    "position": b.position,
                    "role": b.role,
                    "element_type": b.element_type,
                    "elements": b.element_count(),
                    "checksum": format!("{:08x}", b.checksum()),
                })
            })
            .collect();
        let value = json!({
            "kernel": c.definition.name(),
            "kernel_key": c.definition.kernel_key(),
            "problem": c.problem,
            "metadata": c.metadata,
            "scalars": c.scalars,
            "buffers": buffers,
            "space_size": space.cardinality().ok(),
            "definition": c.definition.to_file(),
        });
        println!("{}", serde_json::to_string_pretty(&value)?);
        return Ok(());
    }
    println!("kernel:      {}", c.definition.name());
    println!("kernel key:  {}", c.definition.kernel_key());
    println!("problem:     {}", c.problem);
    println!("application: {}", c.metadata.application);
    println!("timestamp:   {}", c.metadata.timestamp);
    match space.cardinality() {
        Ok(n) => println!("parameters:  {} ({n} combinations before restrictions)", space.params().len()),
        Err(_) => println!("parameters:  {}", space.params().len()),
    }
    for s in &c.scalars {
        let v = match s.value {
            ScalarValue::Int(v) => v.to_string(),
            ScalarValue::Float(v) => v.to_string(),
        };
        println!("arg {}: {:?} scalar = {v}", s.position, s.element_type);
    }
    for b in &c.buffers {
        println!(
            "arg {}: {:?} {:?} buffer, {} elements, crc32 {:08x}",
            b.position,
            b.role,
            b.element_type,
            b.element_count(),
            b.checksum()
        );
    }
    Ok(())
}

fn element_type(s: &str) -> Result<ElementType> {
    serde_json::from_value(json!(s)).map_err(|_| anyhow::anyhow!("unknown element type `{s}`"))
}

/// Deterministic buffer contents: element `i` holds `i % 100`.
fn fill(ty: ElementType, count: usize) -> Vec<u8> {
    let v = (0..count).map(|i| (i % 100) as u8);
    match ty {
        ElementType::F32 => to_le_bytes(&v.map(f32::from).collect::<Vec<_>>()),
        ElementType::F64 => to_le_bytes(&v.map(f64::from).collect::<Vec<_>>()),
        ElementType::I8 => to_le_bytes(&v.map(|x| x as i8).collect::<Vec<_>>()),
        ElementType::I16 => to_le_bytes(&v.map(i16::from).collect::<Vec<_>>()),
        ElementType::I32 => to_le_bytes(&v.map(i32::from).collect::<Vec<_>>()),
        ElementType::I64 => to_le_bytes(&v.map(i64::from).collect::<Vec<_>>()),
        ElementType::U8 => v.collect(),
        ElementType::U16 => to_le_bytes(&v.map(u16::from).collect::<Vec<_>>()),
        ElementType::U32 => to_le_bytes(&v.map(u32::from).collect::<Vec<_>>()),
        ElementType::U64 => to_le_bytes(&v.map(u64::from).collect::<Vec<_>>()),
    }
}

enum ArgSpec {
    Scalar(ElementType, ScalarValue),
    Buffer(BufferRole, ElementType, Vec<u8>),
}

fn parse_arg(spec: &str) -> Result<ArgSpec> {
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        [role @ ("in" | "out"), ty, count] => {
            let ty = element_type(ty)?;
            let count: usize = count
                .parse()
                .with_context(|| format!("bad element count in `{spec}`"))?;
            let role = if *role == "in" { BufferRole::Input } else { BufferRole::Output };
            Ok(ArgSpec::Buffer(role, ty, fill(ty, count)))
        }
        [ty, value] => {
            let ty = element_type(ty)?;
            let value = if ty.is_float() {
                ScalarValue::Float(value.parse().with_context(|| format!("bad float in `{spec}`"))?)
            } else {
                ScalarValue::Int(value.parse().with_context(|| format!("bad integer in `{spec}`"))?)
            };
            Ok(ArgSpec::Scalar(ty, value))
        }
        _ => bail!("cannot parse argument `{spec}` (expected TYPE:VALUE or in|out:TYPE:COUNT)"),
    }
}

fn synth(definition: &Path, specs: &[String], output: &Path, timestamp: Option<String>) -> Result<()> {
    let def = KernelDefinition::load(definition)
        .with_context(|| format!("cannot load kernel definition {}", definition.display()))?;
    let specs = specs.iter().map(|s| parse_arg(s)).collect::<Result<Vec<_>>>()?;
    let args: Vec<KernelArg<'_>> = specs
        .iter()
        .map(|s| match s {
            ArgSpec::Scalar(ty, value) => KernelArg::Scalar {
                element_type: *ty,
                value: *value,
            },
            ArgSpec::Buffer(role, ty, data) => KernelArg::Buffer {
                role: *role,
                element_type: *ty,
                data,
            },
        })
        .collect();
    let mut meta = CaptureMetadata::now("klaunch capture synth");
    if let Some(t) = timestamp {
        meta.timestamp = t;
    }
    let capture = Capture::from_launch(&def, &args, meta)?;
    capture.write(output)?;
    println!("{}", output.display());
    Ok(())
}
