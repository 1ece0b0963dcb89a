//! Closed-form parameter counts and the FLOPs model for both variants.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};

/// Estimated flops per tube element of one fast length-`C` transform,
/// per `log₂ C`. Only used for the separately reported transform overhead.
pub const TRANSFORM_FLOPS_PER_LOG: f64 = 5.0;

/// Exact parameter counts of one encoder variant.
///
/// The per-layer fields count a single block; `encoder_total` covers all
/// blocks plus the final normalization.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    pub variant: Variant,
    pub layers: u64,
    pub mhsa_weights: u64,
    pub ffn_weights: u64,
    pub ln: u64,
    pub mhsa_biases: u64,
    pub ffn_biases: u64,
    pub per_layer: u64,
    pub final_ln: u64,
    pub encoder_total: u64,
    pub pos: u64,
    pub cls: u64,
    pub patch_proj: u64,
    pub head: u64,
    pub grand_total: u64,
}

impl ParamBreakdown {
    /// Biases of one block.
    pub fn biases(&self) -> u64 {
        self.mhsa_biases + self.ffn_biases
    }

    /// Positional, class-token and patch-projection parameters.
    pub fn embeddings(&self) -> u64 {
        self.pos + self.cls + self.patch_proj
    }
}

/// Counts the parameters of `config` for its own variant.
pub fn count_params(config: &ModelConfig) -> Result<ParamBreakdown> {
    config.validate()?;
    let u = |v: usize| v as u64;
    let (d, s, r) = (u(config.dim()), u(config.slices()), u(config.r_ff));
    let classes = u(config.num_classes);
    let mhsa_weights = 4 * d * d * s;
    let ffn_weights = 2 * r * d * d * s;
    let ln = 4 * d * s;
    let mhsa_biases = 4 * d * s;
    let ffn_biases = (r + 1) * d * s;
    let per_layer = mhsa_weights + ffn_weights + ln + mhsa_biases + ffn_biases;
    let final_ln = 2 * d * s;
    let encoder_total = u(config.layers) * per_layer + final_ln;
    let pos = u(config.tokens()) * d * s;
    let cls = d * s;
    let patch_proj = match config.variant {
        Variant::Tcp => 0,
        Variant::Std => {
            let e = u(config.flat_dim());
            e * e + e
        }
    };
    let head = d * s * classes + classes;
    Ok(ParamBreakdown {
        variant: config.variant,
        layers: u(config.layers),
        mhsa_weights,
        ffn_weights,
        ln,
        mhsa_biases,
        ffn_biases,
        per_layer,
        final_ln,
        encoder_total,
        pos,
        cls,
        patch_proj,
        head,
        grand_total: encoder_total + pos + cls + patch_proj + head,
    })
}

/// Both variants of one architecture side by side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamComparison {
    pub tcp: ParamBreakdown,
    pub std: ParamBreakdown,
    pub encoder_ratio: f64,
    pub total_ratio: f64,
}

pub fn compare_params(config: &ModelConfig) -> Result<ParamComparison> {
    let tcp = count_params(&config.with_variant(Variant::Tcp))?;
    let std = count_params(&config.with_variant(Variant::Std))?;
    Ok(ParamComparison {
        encoder_ratio: tcp.encoder_total as f64 / std.encoder_total as f64,
        total_ratio: tcp.grand_total as f64 / std.grand_total as f64,
        tcp,
        std,
    })
}

/// Per-layer encoder FLOPs of both variants for `N` tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub tokens: u64,
    pub d: u64,
    pub channels: u64,
    pub r_ff: u64,
    pub layers: u64,
    pub alpha: u64,
    pub tcp_flops_per_layer: u64,
    pub std_flops_per_layer: u64,
    pub tcp_flops: u64,
    pub std_flops: u64,
    pub ratio: f64,
    /// Estimated cost of the mode-3 transforms per layer; not part of
    /// `ratio`.
    pub transform_overhead: f64,
}

/// `(8 + 2·r)·δ²·N + 4·N²·δ`: projections plus the two attention products,
/// counting a multiply-add as two flops.
pub fn f_layer(tokens: u64, delta: u64, r_ff: u64) -> u64 {
    (8 + 2 * r_ff) * delta * delta * tokens + 4 * tokens * tokens * delta
}

/// FLOPs of both variants with `d = P²` and `C` channels at `tokens`
/// sequence length.
pub fn flops_model(config: &ModelConfig, tokens: usize) -> Result<FlopsReport> {
    config.validate()?;
    if tokens == 0 {
        return Err(Error::Config("token count must be positive".into()));
    }
    let n = tokens as u64;
    let d = config.patch_area() as u64;
    let c = config.channels as u64;
    let r = config.r_ff as u64;
    let layers = config.layers as u64;
    let alpha = (8 + 2 * r) * d;
    let tcp = c * f_layer(n, d, r);
    let std = f_layer(n, d * c, r);
    let ratio = (alpha + 4 * n) as f64 / (alpha * c + 4 * n) as f64;
    let transform_overhead = (n * d * c) as f64 * (c as f64).log2() * TRANSFORM_FLOPS_PER_LOG;
    Ok(FlopsReport {
        tokens: n,
        d,
        channels: c,
        r_ff: r,
        layers,
        alpha,
        tcp_flops_per_layer: tcp,
        std_flops_per_layer: std,
        tcp_flops: tcp * layers,
        std_flops: std * layers,
        ratio,
        transform_overhead,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Table,
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(Format::Table),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown format `{other}`"))),
        }
    }
}

/// `1234567` → `"1,234,567"`.
pub fn group_thousands(v: u64) -> String {
    let digits = v.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                let _ = write!(out, "{cell:<w$}");
            } else {
                let _ = write!(out, "  {cell:>w$}");
            }
        }
        out.push('\n');
    };
    line(header.to_vec(), &mut out);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(rule.iter().map(String::as_str).collect(), &mut out);
    for row in rows {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

fn ratio_cell(a: u64, b: u64) -> String {
    if b == 0 {
        "-".into()
    } else {
        format!("{:.3}", a as f64 / b as f64)
    }
}

fn csv_records<S: Serialize>(records: &[S]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)
            .map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Config(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(format!("csv: {e}")))
}

fn to_json<S: Serialize>(v: &S) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Config(format!("json: {e}")))
}

/// Renders a parameter comparison. The CSV form has one row per variant
/// with every [`ParamBreakdown`] field.
pub fn emit_params(cmp: &ParamComparison, format: Format) -> Result<String> {
    match format {
        Format::Json => to_json(cmp),
        Format::Csv => csv_records(&[&cmp.tcp, &cmp.std]),
        Format::Table => {
            let (t, s) = (&cmp.tcp, &cmp.std);
            let row = |name: &str, a: u64, b: u64| {
                vec![
                    name.to_string(),
                    group_thousands(a),
                    group_thousands(b),
                    ratio_cell(a, b),
                ]
            };
            let rows = vec![
                row("MHSA weights / layer", t.mhsa_weights, s.mhsa_weights),
                row("FFN weights / layer", t.ffn_weights, s.ffn_weights),
                row("LayerNorm / layer", t.ln, s.ln),
                row("Biases / layer", t.biases(), s.biases()),
                row("Total per layer", t.per_layer, s.per_layer),
                row("Final LayerNorm", t.final_ln, s.final_ln),
                row("Transformer encoder", t.encoder_total, s.encoder_total),
                row("Position embedding", t.pos, s.pos),
                row("Class token", t.cls, s.cls),
                row("Patch projection", t.patch_proj, s.patch_proj),
                row("Classification head", t.head, s.head),
                row("Total", t.grand_total, s.grand_total),
            ];
            Ok(render_table(
                &["Component", "TCP-ViT", "Std-ViT", "Ratio"],
                &rows,
            ))
        }
    }
}

/// Renders a FLOPs report.
pub fn emit_flops(report: &FlopsReport, format: Format) -> Result<String> {
    match format {
        Format::Json => to_json(report),
        Format::Csv => csv_records(&[report]),
        Format::Table => {
            let r = report;
            let rows = vec![
                vec![
                    "FLOPs / layer".to_string(),
                    group_thousands(r.tcp_flops_per_layer),
                    group_thousands(r.std_flops_per_layer),
                    format!("{:.5}", r.ratio),
                ],
                vec![
                    format!("FLOPs x {} layers", r.layers),
                    group_thousands(r.tcp_flops),
                    group_thousands(r.std_flops),
                    format!("{:.5}", r.ratio),
                ],
            ];
            let mut out = render_table(&["Quantity", "TCP-ViT", "Std-ViT", "Ratio"], &rows);
            let _ = writeln!(
                out,
                "N = {}, d = {}, C = {}, r_ff = {}, alpha = {}, ratio = {}",
                r.tokens, r.d, r.channels, r.r_ff, r.alpha, r.ratio
            );
            let _ = writeln!(
                out,
                "transform overhead / layer (excluded): {:.0}",
                r.transform_overhead
            );
            Ok(out)
        }
    }
}
