//! Field snapshot files.
//!
//! A snapshot is a TOML header terminated by a line holding `---`, followed by
//! little-endian `f64` samples in node-major, component-minor order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::chart::{GridChart, Linear, StencilOrder};
use crate::error::{Error, Result};
use crate::field::{Components, Field};

const SEPARATOR: &str = "---\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotHeader {
    pub format: u32,
    pub resolution: [usize; 3],
    pub period: [f64; 3],
    pub stencil_order: StencilOrder,
    pub rank: String,
    pub components: Vec<String>,
    /// Flow parameter or kernel time the field belongs to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<f64>,
    /// Source node of kernel snapshots.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantity: Option<String>,
}

fn component_names(width: usize) -> Vec<String> {
    match width {
        1 => vec!["s".into()],
        3 => ["1", "2", "3"].map(String::from).to_vec(),
        6 => ["11", "12", "13", "22", "23", "33"].map(String::from).to_vec(),
        n => (0..n).map(|i| i.to_string()).collect(),
    }
}

impl SnapshotHeader {
    pub fn for_field<T: Components>(chart: &GridChart) -> Self {
        SnapshotHeader {
            format: FORMAT_VERSION,
            resolution: chart.resolution(),
            period: chart.period(),
            stencil_order: chart.order(),
            rank: T::RANK_NAME.to_string(),
            components: component_names(T::WIDTH),
            label: None,
            source: None,
            quantity: None,
        }
    }

    pub fn with_label(mut self, label: f64) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_source(mut self, source: usize) -> Self {
        self.source = Some(source);
        self
    }

    pub fn with_quantity(mut self, q: &str) -> Self {
        self.quantity = Some(q.to_string());
        self
    }
}

pub fn encode<T: Linear + Components>(field: &Field<T>, header: &SnapshotHeader) -> Result<Vec<u8>> {
    let text = toml::to_string(header).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = text.into_bytes();
    out.extend_from_slice(SEPARATOR.as_bytes());
    out.reserve(field.data().len() * T::WIDTH * 8);
    for v in field.data() {
        for x in v.components() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode<T: Linear + Components>(bytes: &[u8]) -> std::result::Result<(Field<T>, SnapshotHeader), String> {
    let marker = b"\n---\n";
    let split = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or("missing header separator")?;
    let text = std::str::from_utf8(&bytes[..split + 1]).map_err(|e| e.to_string())?;
    let header: SnapshotHeader = toml::from_str(text).map_err(|e| e.to_string())?;
    if header.format != FORMAT_VERSION {
        return Err(format!("unsupported format {}", header.format));
    }
    if header.rank != T::RANK_NAME {
        return Err(format!("expected rank {}, found {}", T::RANK_NAME, header.rank));
    }
    if header.components != component_names(T::WIDTH) {
        return Err(format!("unexpected component ordering {:?}", header.components));
    }
    let chart = GridChart::new(header.resolution, header.period, header.stencil_order).map_err(|e| e.to_string())?;
    let body = &bytes[split + marker.len()..];
    let expected = chart.node_count() * T::WIDTH * 8;
    if body.len() != expected {
        return Err(format!("expected {expected} data bytes, found {}", body.len()));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let data = values.chunks_exact(T::WIDTH).map(T::from_components).collect();
    let field = Field::from_vec(chart, data).map_err(|e| e.to_string())?;
    Ok((field, header))
}

pub fn write<T: Linear + Components>(path: &Path, field: &Field<T>, header: &SnapshotHeader) -> Result<()> {
    fs::write(path, encode(field, header)?)?;
    Ok(())
}

pub fn read<T: Linear + Components>(path: &Path) -> Result<(Field<T>, SnapshotHeader)> {
    let bytes = fs::read(path)?;
    decode(&bytes).map_err(|reason| Error::Snapshot {
        path: path.to_path_buf(),
        reason,
    })
}
