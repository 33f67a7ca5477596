//! Standalone C99 translation of a network.
//!
//! [`generate`] fills the shipped templates (`templates/ebnn.h.in` and
//! `templates/ebnn.c.in`) with the packed weights, batch-norm constants and a
//! block table. The C runtime in the template runs the same fused loops, in
//! the same order and with the same single-precision operation sequence, as
//! [`network_forward`](crate::network_forward), so labels, scores and every
//! block output agree bit for bit when compiled with `-ffp-contract=off`.
//!
//! Real constants are written as hexadecimal float literals. Working storage
//! is two `T`-byte buffers plus the accumulator, either static or in a
//! caller-provided arena.
//!
//! Placeholders in the templates have the form `@NAME@`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::bitops::BitTensor;
use crate::error::{Error, Result};
use crate::inference::{network_forward_observed, BlockInput, BlockOutputs, TempArena};
use crate::memory::ebnn_temp_bytes;
use crate::model::{fold_bn, Block, BnParams, ElementKind, Network};

pub const HEADER_TEMPLATE: &str = include_str!("../templates/ebnn.h.in");
pub const SOURCE_TEMPLATE: &str = include_str!("../templates/ebnn.c.in");

/// Environment variable naming the C compiler used by [`compile_self_test`].
pub const CC_ENV: &str = "EBNN_CC";
/// Flags required for bit-exact float parity.
pub const CC_FLAGS: [&str; 4] = ["-std=c99", "-ffp-contract=off", "-O2", "-Wall"];

const C_KEYWORDS: [&str; 37] = [
    "auto",
    "break",
    "case",
    "char",
    "const",
    "continue",
    "default",
    "do",
    "double",
    "else",
    "enum",
    "extern",
    "float",
    "for",
    "goto",
    "if",
    "inline",
    "int",
    "long",
    "register",
    "restrict",
    "return",
    "short",
    "signed",
    "sizeof",
    "static",
    "struct",
    "switch",
    "typedef",
    "union",
    "unsigned",
    "void",
    "volatile",
    "while",
    "_Bool",
    "_Complex",
    "_Imaginary",
];

/// Where the generated code keeps its working storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ArenaMode {
    /// File-scope static buffers; `predict` is not reentrant.
    #[default]
    Static,
    /// The caller passes a `PREFIX_arena_t`.
    Caller,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodegenOptions {
    /// Prefix of every exported symbol and of the file names.
    pub prefix: String,
    /// Emit folded thresholds rather than raw batch-norm parameters.
    pub emit_folded_bn: bool,
    pub arena: ArenaMode,
    /// Embed samples and expected outputs for the self-test `main`.
    pub include_test_vectors: bool,
}

impl Default for CodegenOptions {
    fn default() -> Self {
        CodegenOptions {
            prefix: "ebnn_model".into(),
            emit_folded_bn: true,
            arena: ArenaMode::Static,
            include_test_vectors: false,
        }
    }
}

impl CodegenOptions {
    pub fn check(&self) -> Result<()> {
        let p = &self.prefix;
        let mut chars = p.chars();
        let head_ok = chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_');
        if !head_ok || !chars.all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::Option(format!("prefix {p:?} is not a C identifier")));
        }
        if C_KEYWORDS.contains(&p.as_str()) {
            return Err(Error::Option(format!("prefix {p:?} is a C keyword")));
        }
        Ok(())
    }

    fn macro_prefix(&self) -> String {
        self.prefix.to_ascii_uppercase()
    }
}

/// A generated header and source pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedCode {
    pub header_name: String,
    pub source_name: String,
    pub header: String,
    pub source: String,
}

impl GeneratedCode {
    /// Writes both files into `dir`, returning their paths.
    pub fn write_to(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let h = dir.join(&self.header_name);
        let c = dir.join(&self.source_name);
        std::fs::write(&h, &self.header)?;
        std::fs::write(&c, &self.source)?;
        Ok((h, c))
    }
}

/// A placeholder of a template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemplateSlot {
    pub token: &'static str,
    pub description: &'static str,
    pub required: bool,
}

pub const HEADER_SLOTS: [TemplateSlot; 11] = [
    TemplateSlot {
        token: "SUMMARY",
        description: "one-line model summary",
        required: true,
    },
    TemplateSlot {
        token: "GUARD",
        description: "include guard macro",
        required: true,
    },
    TemplateSlot {
        token: "MACRO",
        description: "upper-case symbol prefix",
        required: true,
    },
    TemplateSlot {
        token: "PREFIX",
        description: "symbol prefix",
        required: true,
    },
    TemplateSlot {
        token: "INPUT_LEN",
        description: "input array length",
        required: true,
    },
    TemplateSlot {
        token: "CLASSES",
        description: "number of classes",
        required: true,
    },
    TemplateSlot {
        token: "BLOCK_COUNT",
        description: "number of blocks",
        required: true,
    },
    TemplateSlot {
        token: "BUFFER_BYTES",
        description: "bytes of one activation buffer",
        required: true,
    },
    TemplateSlot {
        token: "CALLER_ARENA",
        description: "1 for a caller-provided arena",
        required: true,
    },
    TemplateSlot {
        token: "LABEL_T",
        description: "label integer type",
        required: true,
    },
    TemplateSlot {
        token: "INPUT_T",
        description: "input element type",
        required: true,
    },
];

pub const SOURCE_SLOTS: [TemplateSlot; 9] = [
    TemplateSlot {
        token: "SUMMARY",
        description: "one-line model summary",
        required: true,
    },
    TemplateSlot {
        token: "HEADER_NAME",
        description: "file name of the header",
        required: true,
    },
    TemplateSlot {
        token: "REAL_INPUT",
        description: "1 for real input, 0 for packed bits",
        required: true,
    },
    TemplateSlot {
        token: "MODEL_DATA",
        description: "weights, batch norm and block table",
        required: true,
    },
    TemplateSlot {
        token: "TEST_VECTORS",
        description: "self-test data, possibly empty",
        required: true,
    },
    TemplateSlot {
        token: "MACRO",
        description: "upper-case symbol prefix",
        required: true,
    },
    TemplateSlot {
        token: "PREFIX",
        description: "symbol prefix",
        required: true,
    },
    TemplateSlot {
        token: "LABEL_T",
        description: "label integer type",
        required: true,
    },
    TemplateSlot {
        token: "INPUT_T",
        description: "input element type",
        required: true,
    },
];

fn is_slot_char(c: u8) -> bool {
    c.is_ascii_uppercase() || c.is_ascii_digit() || c == b'_'
}

/// Splits a template into literal text and placeholder names.
fn scan(template: &str) -> Vec<(bool, &str)> {
    let bytes = template.as_bytes();
    let mut parts = Vec::new();
    let (mut start, mut i) = (0, 0);
    while i < bytes.len() {
        if bytes[i] == b'@' {
            let mut j = i + 1;
            while j < bytes.len() && is_slot_char(bytes[j]) {
                j += 1;
            }
            if j > i + 1 && j < bytes.len() && bytes[j] == b'@' {
                parts.push((false, &template[start..i]));
                parts.push((true, &template[i + 1..j]));
                i = j + 1;
                start = i;
                continue;
            }
        }
        i += 1;
    }
    parts.push((false, &template[start..]));
    parts
}

/// Distinct placeholder names of a template, in first-use order.
pub fn template_slots(template: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    scan(template)
        .into_iter()
        .filter(|(slot, name)| *slot && seen.insert(*name))
        .map(|(_, name)| name.to_string())
        .collect()
}

/// Replaces every `@NAME@` with its substitution.
///
/// Each placeholder must receive exactly one substitution, and every
/// substitution must name a placeholder of the template.
pub fn instantiate(template: &str, substitutions: &[(&str, String)]) -> Result<String> {
    let mut names = BTreeSet::new();
    for (name, _) in substitutions {
        if !names.insert(*name) {
            return Err(Error::Template(format!("slot @{name}@ substituted twice")));
        }
    }
    let slots = template_slots(template);
    for slot in &slots {
        if !names.contains(slot.as_str()) {
            return Err(Error::Template(format!("slot @{slot}@ has no substitution")));
        }
    }
    for name in &names {
        if !slots.iter().any(|s| s == name) {
            return Err(Error::Template(format!("template has no slot @{name}@")));
        }
    }
    let mut out = String::with_capacity(template.len());
    for (slot, text) in scan(template) {
        if slot {
            let value = &substitutions
                .iter()
                .find(|(n, _)| *n == text)
                .expect("checked above")
                .1;
            out.push_str(value);
        } else {
            out.push_str(text);
        }
    }
    Ok(out)
}

/// Exact C99 hexadecimal literal of a finite `f32`, with an `f` suffix.
pub fn hex_f32(x: f32) -> String {
    assert!(x.is_finite(), "hex_f32 needs a finite value");
    let bits = x.to_bits();
    let sign = if bits >> 31 == 1 { "-" } else { "" };
    let exp = ((bits >> 23) & 0xff) as i32;
    let mant = bits & 0x7f_ffff;
    if exp == 0 && mant == 0 {
        return format!("{sign}0x0p+0f");
    }
    let (lead, e) = if exp == 0 { (0, -126) } else { (1, exp - 127) };
    // 23 fraction bits shifted to fill six hex digits
    let digits = format!("{:06x}", mant << 1);
    let digits = digits.trim_end_matches('0');
    let frac = if digits.is_empty() {
        String::new()
    } else {
        format!(".{digits}")
    };
    format!("{sign}0x{lead}{frac}p{e:+}f")
}

fn f32_init(x: f32) -> String {
    if x.is_finite() {
        format!("{{ .f = {} }}", hex_f32(x))
    } else {
        format!("{{ .u = 0x{:08x}u }}", x.to_bits())
    }
}

fn byte_list(bytes: &[u8], indent: &str) -> String {
    let mut s = String::new();
    for (i, chunk) in bytes.chunks(16).enumerate() {
        if i > 0 {
            s.push('\n');
        }
        s.push_str(indent);
        let items: Vec<String> = chunk.iter().map(|b| format!("0x{b:02x}")).collect();
        s.push_str(&items.join(", "));
        s.push(',');
    }
    s
}

fn label_type(classes: usize) -> &'static str {
    if classes <= 256 {
        "uint8_t"
    } else if classes <= 65536 {
        "uint16_t"
    } else {
        "uint32_t"
    }
}

fn input_len(net: &Network) -> usize {
    match net.input.kind {
        ElementKind::Real => net.input.shape.len(),
        ElementKind::Binary => net.input.shape.packed_bytes(),
    }
}

fn bn_init(bn: &BnParams) -> String {
    format!(
        "{{ {}, {}, {}, {} }}",
        hex_f32(bn.gamma),
        hex_f32(bn.beta),
        hex_f32(bn.mean),
        hex_f32(bn.std())
    )
}

fn model_data(net: &Network, opts: &CodegenOptions) -> Result<String> {
    let shapes = net.shapes()?;
    let last = net.blocks.len() - 1;
    let mut s = String::new();
    let mut table = Vec::new();
    for (i, (block, sh)) in net.blocks.iter().zip(&shapes).enumerate() {
        let w = block.weights().as_bytes();
        writeln!(s, "static const uint8_t ebnn_w{i}[{}] = {{", w.len()).unwrap();
        writeln!(s, "{}", byte_list(w, "    ")).unwrap();
        s.push_str("};\n");
        let fold_ref = if opts.emit_folded_bn {
            writeln!(
                s,
                "static const ebnn_fold_t ebnn_fold{i}[{}] = {{",
                block.bn().len()
            )
            .unwrap();
            for bn in block.bn() {
                let f = fold_bn(bn)?;
                writeln!(s, "    {{ {}, {} }},", f32_init(f.threshold), u8::from(f.flip)).unwrap();
            }
            s.push_str("};\n");
            format!("ebnn_fold{i}")
        } else {
            "0".to_string()
        };
        let bn_ref = if !opts.emit_folded_bn || i == last {
            writeln!(s, "static const ebnn_bn_t ebnn_bn{i}[{}] = {{", block.bn().len()).unwrap();
            for bn in block.bn() {
                bn.check().map_err(Error::DegenerateParameter)?;
                writeln!(s, "    {},", bn_init(bn)).unwrap();
            }
            s.push_str("};\n");
            format!("ebnn_bn{i}")
        } else {
            "0".to_string()
        };
        let (kind, kernel, stride, pool, pool_stride) = match block {
            Block::FusedFc(_) => ("EBNN_FC", 0, 0, 0, 0),
            Block::FusedConv(b) => ("EBNN_CONV", b.kernel, b.stride, 1, 1),
            Block::FusedConvPool(b, p) => ("EBNN_CONV", b.kernel, b.stride, p.size, p.stride),
        };
        let (i_, o) = (sh.input, sh.output);
        table.push(format!(
            "    {{ {kind}, {}, {}, {}, {}, {}, {}, {kernel}, {stride}, {pool}, {pool_stride}, ebnn_w{i}, {fold_ref}, {bn_ref} }},",
            i_.channels, i_.height, i_.width, o.channels, o.height, o.width
        ));
    }
    writeln!(
        s,
        "\nstatic const ebnn_block_t ebnn_blocks[{}] = {{\n{}\n}};",
        net.blocks.len(),
        table.join("\n")
    )
    .unwrap();
    Ok(s)
}

fn summary(net: &Network) -> String {
    let kinds: Vec<&str> = net.blocks.iter().map(|b| b.kind_name()).collect();
    format!(
        "eBNN model: {} input {}, blocks {}",
        match net.input.kind {
            ElementKind::Real => "real",
            ElementKind::Binary => "binary",
        },
        net.input.shape,
        kinds.join(" -> ")
    )
}

/// Expected outputs for `samples`, as the self-test section of the source.
///
/// Returns an empty string when there are no samples.
pub fn emit_test_vectors(net: &Network, samples: &[BlockInput<'_>]) -> Result<String> {
    if samples.is_empty() {
        return Ok(String::new());
    }
    net.check()?;
    let shapes = net.shapes()?;
    let mut offsets = vec![0usize];
    for s in &shapes {
        offsets.push(offsets.last().unwrap() + s.output.packed_bytes());
    }
    let mut arena = TempArena::for_network(net)?;
    let mut scores = vec![0.0; net.classes()];
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut blocks = Vec::new();
    for x in samples {
        let mut outs = BlockOutputs::default();
        let label = network_forward_observed(net, *x, &mut arena, &mut scores, &mut outs)?;
        labels.push(label.to_string());
        let bytes: Vec<u8> = outs.0.iter().flat_map(|t| t.as_bytes().iter().copied()).collect();
        blocks.push(format!("    {{\n{}\n    }},", byte_list(&bytes, "        ")));
        inputs.push(match x {
            BlockInput::Real(t) => {
                let vals: Vec<String> = t.data.iter().map(|v| hex_f32(*v)).collect();
                let lines: Vec<String> = vals
                    .chunks(8)
                    .map(|c| format!("        {},", c.join(", ")))
                    .collect();
                format!("    {{\n{}\n    }},", lines.join("\n"))
            }
            BlockInput::Binary(v) => format!("    {{\n{}\n    }},", byte_list(v.data, "        ")),
        });
    }
    let n = samples.len();
    let input_t = match net.input.kind {
        ElementKind::Real => "float",
        ElementKind::Binary => "uint8_t",
    };
    let offs: Vec<String> = offsets.iter().map(|o| format!("{o}u")).collect();
    let mut s = String::new();
    s.push_str("#ifdef EBNN_SELF_TEST\n");
    writeln!(s, "#define EBNN_TV_COUNT {n}u").unwrap();
    writeln!(
        s,
        "static const uint32_t ebnn_tv_block_offset[{}] = {{ {} }};",
        offsets.len(),
        offs.join(", ")
    )
    .unwrap();
    writeln!(
        s,
        "static const {input_t} ebnn_tv_inputs[{n}][{}] = {{\n{}\n}};",
        input_len(net),
        inputs.join("\n")
    )
    .unwrap();
    writeln!(
        s,
        "static const uint32_t ebnn_tv_labels[{n}] = {{ {} }};",
        labels.join(", ")
    )
    .unwrap();
    writeln!(
        s,
        "static const uint8_t ebnn_tv_blocks[{n}][{}] = {{\n{}\n}};",
        offsets[offsets.len() - 1],
        blocks.join("\n")
    )
    .unwrap();
    s.push_str("#endif\n");
    Ok(s)
}

/// Translates `net` into a header and source pair.
///
/// Test vectors are embedded when the options ask for them and `samples`
/// is not empty.
pub fn generate(net: &Network, opts: &CodegenOptions, samples: &[BlockInput<'_>]) -> Result<GeneratedCode> {
    opts.check()?;
    net.check()?;
    let m = opts.macro_prefix();
    let header_name = format!("{}.h", opts.prefix);
    let summary = summary(net);
    let label_t = label_type(net.classes());
    let input_t = match net.input.kind {
        ElementKind::Real => "float",
        ElementKind::Binary => "uint8_t",
    };
    let header = instantiate(
        HEADER_TEMPLATE,
        &[
            ("SUMMARY", summary.clone()),
            ("GUARD", format!("{m}_H")),
            ("MACRO", m.clone()),
            ("PREFIX", opts.prefix.clone()),
            ("INPUT_LEN", format!("{}u", input_len(net))),
            ("CLASSES", format!("{}u", net.classes())),
            ("BLOCK_COUNT", format!("{}u", net.blocks.len())),
            ("BUFFER_BYTES", format!("{}u", ebnn_temp_bytes(net)?)),
            (
                "CALLER_ARENA",
                u8::from(opts.arena == ArenaMode::Caller).to_string(),
            ),
            ("LABEL_T", label_t.into()),
            ("INPUT_T", input_t.into()),
        ],
    )?;
    let vectors = if opts.include_test_vectors {
        emit_test_vectors(net, samples)?
    } else {
        String::new()
    };
    let source = instantiate(
        SOURCE_TEMPLATE,
        &[
            ("SUMMARY", summary),
            ("HEADER_NAME", header_name.clone()),
            (
                "REAL_INPUT",
                u8::from(net.input.kind == ElementKind::Real).to_string(),
            ),
            ("MODEL_DATA", model_data(net, opts)?),
            ("TEST_VECTORS", vectors),
            ("MACRO", m),
            ("PREFIX", opts.prefix.clone()),
            ("LABEL_T", label_t.into()),
            ("INPUT_T", input_t.into()),
        ],
    )?;
    Ok(GeneratedCode {
        source_name: format!("{}.c", opts.prefix),
        header_name,
        header,
        source,
    })
}

/// The configured C compiler command, if it runs.
pub fn c_compiler() -> Option<Vec<String>> {
    let cmd = std::env::var(CC_ENV).unwrap_or_else(|_| "cc".into());
    let parts: Vec<String> = cmd.split_whitespace().map(String::from).collect();
    let (prog, args) = parts.split_first()?;
    let ok = Command::new(prog)
        .args(args)
        .arg("--version")
        .output()
        .is_ok_and(|o| o.status.success());
    ok.then_some(parts)
}

/// Result of running a generated self-test program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelfTestRun {
    pub passed: bool,
    /// Label returned by the generated `predict` for each test vector.
    pub labels: Vec<usize>,
    /// Bit patterns of the generated scores for each test vector.
    pub score_bits: Vec<Vec<u32>>,
    /// Whether every block output matched for each test vector.
    pub blocks_match: Vec<bool>,
    pub stdout: String,
}

/// Compiles `code` with its self-test `main` in `dir` and runs it.
///
/// Returns `None` when no C compiler is available.
pub fn compile_self_test(code: &GeneratedCode, dir: &Path) -> Result<Option<SelfTestRun>> {
    let Some(cc) = c_compiler() else {
        return Ok(None);
    };
    let (_, source) = code.write_to(dir)?;
    let exe = dir.join(format!("{}_selftest", code.source_name.trim_end_matches(".c")));
    let out = Command::new(&cc[0])
        .args(&cc[1..])
        .args(CC_FLAGS)
        .arg("-DEBNN_SELF_TEST")
        .arg("-o")
        .arg(&exe)
        .arg(&source)
        .output()?;
    if !out.status.success() {
        return Err(Error::Template(format!(
            "C compilation failed:\n{}",
            String::from_utf8_lossy(&out.stderr)
        )));
    }
    let run = Command::new(&exe).output()?;
    let stdout = String::from_utf8_lossy(&run.stdout).into_owned();
    let mut labels = Vec::new();
    let mut score_bits = Vec::new();
    let mut blocks_match = Vec::new();
    for line in stdout.lines().filter(|l| l.starts_with("vector ")) {
        let words: Vec<&str> = line.split_whitespace().collect();
        let field = |key: &str| -> Result<&str> {
            words
                .iter()
                .position(|w| *w == key)
                .and_then(|p| words.get(p + 1).copied())
                .ok_or_else(|| Error::Template(format!("malformed self-test line {line:?}")))
        };
        labels.push(
            field("label")?
                .parse()
                .map_err(|_| Error::Template(format!("bad label in {line:?}")))?,
        );
        blocks_match.push(field("blocks")? == "match");
        let at = words.iter().position(|w| *w == "scores").unwrap_or(words.len());
        score_bits.push(
            words[at + 1..]
                .iter()
                .map(|w| {
                    u32::from_str_radix(w, 16).map_err(|_| Error::Template(format!("bad score in {line:?}")))
                })
                .collect::<Result<_>>()?,
        );
    }
    Ok(Some(SelfTestRun {
        passed: run.status.success() && stdout.lines().last() == Some("PASS"),
        labels,
        score_bits,
        blocks_match,
        stdout,
    }))
}

/// Packs real samples for a binary-input network the way the trainer does.
pub fn binarize_samples(samples: &[crate::inference::InputTensor]) -> Result<Vec<BitTensor>> {
    samples
        .iter()
        .map(|x| {
            let mut b = BitTensor::zeros(x.shape)?;
            crate::trainer::binarize_into(x, &mut b);
            Ok(b)
        })
        .collect()
}
