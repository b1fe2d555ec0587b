//! Line-oriented text serialization of run traces and occupancy grids.
//!
//! A trace file is:
//!
//! ```text
//! # relattice-trace v1
//! # seed <u64> replica <u32>
//! # lattice <n_cols> <n_rows>
//! # columns cycle loaded att succ collat collat_arr shelv vac img img_arr gains stored true_stored img1_fnv img2_fnv
//! # config-begin
//! <configuration file echoed verbatim>
//! # config-end
//! C <the 13 counts> <img1 checksum> <img2 checksum>
//! I1 <image bits as contiguous hex, 16 chars per 64-bit word>
//! I2 <...>
//! D <comma-separated destination site indices, bare D when none>
//! ...one C/I1/I2/D group per cycle...
//! # checksum fnv1a64 <hex over every preceding byte>
//! ```
//!
//! Every value is an integer and all hex is fixed-width lowercase, so a
//! given trace has exactly one byte representation. Occupancy grids use a
//! separate human-editable 0/1 format with a `# grid` header.

use std::fmt::Write as _;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::num::Scalar;
use crate::sim::{BitGrid, CycleRecord, ImageTag, OccupancyMatrix, RunTrace};

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn parse_err<T>(line: usize, message: impl Into<String>) -> Result<T, TraceError> {
    Err(TraceError::Parse {
        line,
        message: message.into(),
    })
}

/// FNV-1a 64-bit over a byte stream.
pub fn fnv1a64(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn image_checksum(m: &OccupancyMatrix) -> u64 {
    fnv1a64(m.bits().words().iter().flat_map(|w| w.to_le_bytes()))
}

fn push_hex_words(out: &mut String, bits: &BitGrid) {
    for w in bits.words() {
        write!(out, "{w:016x}").expect("writing to a String cannot fail");
    }
}

/// Full parse result of one trace file.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceFile {
    pub seed: u64,
    pub replica: u32,
    pub n_cols: u32,
    pub n_rows: u32,
    /// The configuration block, byte for byte as written.
    pub config_toml: String,
    pub records: Vec<CycleRecord>,
}

/// Serializes a trace; `config_echo` is embedded verbatim so the file is
/// self-describing and can be re-analyzed without the original inputs.
pub fn write_trace<F: Scalar, W: Write>(
    w: &mut W,
    trace: &RunTrace<F>,
    config_echo: &str,
) -> io::Result<()> {
    let geo = &trace.config.geometry;
    let mut out = String::new();
    out.push_str("# relattice-trace v1\n");
    writeln!(out, "# seed {} replica {}", trace.config.rng_seed, trace.replica)
        .expect("writing to a String cannot fail");
    writeln!(out, "# lattice {} {}", geo.n_cols(), geo.n_rows()).expect("infallible");
    out.push_str(
        "# columns cycle loaded att succ collat collat_arr shelv vac img img_arr \
         gains stored true_stored img1_fnv img2_fnv\n",
    );
    out.push_str("# config-begin\n");
    out.push_str(config_echo);
    if !config_echo.ends_with('\n') {
        out.push('\n');
    }
    out.push_str("# config-end\n");
    for r in &trace.records {
        writeln!(
            out,
            "C {} {} {} {} {} {} {} {} {} {} {} {} {} {:016x} {:016x}",
            r.cycle_index,
            r.n_loaded,
            r.n_moves_attempted,
            r.n_moves_succeeded,
            r.n_collateral_losses,
            r.n_collateral_losses_arrivals,
            r.n_shelving_losses,
            r.n_vacuum_losses,
            r.n_imaging_losses,
            r.n_imaging_losses_arrivals,
            r.n_background_gains,
            r.stored_count_after,
            r.true_stored_after,
            image_checksum(&r.image1),
            image_checksum(&r.image2),
        )
        .expect("infallible");
        out.push_str("I1 ");
        push_hex_words(&mut out, r.image1.bits());
        out.push('\n');
        out.push_str("I2 ");
        push_hex_words(&mut out, r.image2.bits());
        out.push('\n');
        out.push('D');
        for (k, d) in r.move_destinations.iter().enumerate() {
            out.push(if k == 0 { ' ' } else { ',' });
            write!(out, "{d}").expect("infallible");
        }
        out.push('\n');
    }
    writeln!(out, "# checksum fnv1a64 {:016x}", fnv1a64(out.bytes())).expect("infallible");
    w.write_all(out.as_bytes())
}

struct LineReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> LineReader<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        self.lines.next().map(|(i, l)| (i + 1, l))
    }

    fn expect_next(&mut self, what: &str) -> Result<(usize, &'a str), TraceError> {
        self.next()
            .ok_or(TraceError::Parse {
                line: 0,
                message: format!("unexpected end of file, expected {what}"),
            })
    }
}

fn parse_hex_words(line_no: usize, text: &str, n_bits: usize) -> Result<BitGrid, TraceError> {
    let n_words = n_bits.div_ceil(64);
    if text.len() != 16 * n_words {
        return parse_err(
            line_no,
            format!(
                "expected {} hex characters for {} sites, found {}",
                16 * n_words,
                n_bits,
                text.len()
            ),
        );
    }
    let mut words = Vec::with_capacity(n_words);
    for k in 0..n_words {
        let chunk = &text[16 * k..16 * (k + 1)];
        let w = u64::from_str_radix(chunk, 16)
            .map_err(|e| TraceError::Parse {
                line: line_no,
                message: format!("bad hex word {k}: {e}"),
            })?;
        words.push(w);
    }
    BitGrid::from_words(n_bits, words).map_err(|m| TraceError::Parse {
        line: line_no,
        message: m,
    })
}

/// Strict parser for the format written by [`write_trace`], trailing
/// checksum included.
pub fn parse_trace(text: &str) -> Result<TraceFile, TraceError> {
    // The checksum line covers every byte before it.
    let marker = "# checksum fnv1a64 ";
    let idx = match text.rfind(&format!("\n{marker}")) {
        Some(i) => i + 1,
        None => {
            return parse_err(
                text.lines().count(),
                "missing trailing checksum line".to_string(),
            )
        }
    };
    let body = &text[..idx];
    let tail = text[idx + marker.len()..].trim_end();
    let stated = u64::from_str_radix(tail, 16).map_err(|e| TraceError::Parse {
        line: body.lines().count() + 1,
        message: format!("bad checksum value: {e}"),
    })?;
    let actual = fnv1a64(body.bytes());
    if stated != actual {
        return parse_err(
            body.lines().count() + 1,
            format!("checksum mismatch: file says {stated:016x}, content hashes to {actual:016x}"),
        );
    }

    let mut rd = LineReader {
        lines: body.lines().enumerate(),
    };

    let (ln, l) = rd.expect_next("header")?;
    if l != "# relattice-trace v1" {
        return parse_err(ln, "not a relattice trace (bad first line)");
    }

    let (ln, l) = rd.expect_next("seed line")?;
    let toks: Vec<&str> = l.split_whitespace().collect();
    let (seed, replica) = match toks.as_slice() {
        ["#", "seed", s, "replica", r] => {
            let seed = s
                .parse::<u64>()
                .map_err(|e| TraceError::Parse { line: ln, message: format!("bad seed: {e}") })?;
            let replica = r
                .parse::<u32>()
                .map_err(|e| TraceError::Parse { line: ln, message: format!("bad replica: {e}") })?;
            (seed, replica)
        }
        _ => return parse_err(ln, "expected '# seed <u64> replica <u32>'"),
    };

    let (ln, l) = rd.expect_next("lattice line")?;
    let toks: Vec<&str> = l.split_whitespace().collect();
    let (n_cols, n_rows) = match toks.as_slice() {
        ["#", "lattice", c, r] => {
            let c = c
                .parse::<u32>()
                .map_err(|e| TraceError::Parse { line: ln, message: format!("bad column count: {e}") })?;
            let r = r
                .parse::<u32>()
                .map_err(|e| TraceError::Parse { line: ln, message: format!("bad row count: {e}") })?;
            (c, r)
        }
        _ => return parse_err(ln, "expected '# lattice <n_cols> <n_rows>'"),
    };
    if n_cols == 0 || n_rows == 0 {
        return parse_err(ln, "lattice dimensions must be positive");
    }
    let n_bits = n_cols as usize * n_rows as usize;

    let (ln, l) = rd.expect_next("columns line")?;
    if !l.starts_with("# columns") {
        return parse_err(ln, "expected the '# columns ...' line");
    }

    let (ln, l) = rd.expect_next("config block")?;
    if l != "# config-begin" {
        return parse_err(ln, "expected '# config-begin'");
    }
    let mut config_toml = String::new();
    loop {
        let (_, l) = rd.expect_next("'# config-end'")?;
        if l == "# config-end" {
            break;
        }
        config_toml.push_str(l);
        config_toml.push('\n');
    }

    let mut records = Vec::new();
    while let Some((ln, l)) = rd.next() {
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.first() != Some(&"C") {
            return parse_err(ln, format!("expected a 'C' record line, found '{l}'"));
        }
        if toks.len() != 16 {
            return parse_err(
                ln,
                format!("record line needs 13 counts and 2 checksums, found {} fields", toks.len() - 1),
            );
        }
        let mut nums = [0u32; 13];
        for (k, t) in toks[1..14].iter().enumerate() {
            nums[k] = t.parse::<u32>().map_err(|e| TraceError::Parse {
                line: ln,
                message: format!("bad count field {}: {e}", k + 1),
            })?;
        }
        let img1_fnv = u64::from_str_radix(toks[14], 16)
            .map_err(|e| TraceError::Parse { line: ln, message: format!("bad image checksum: {e}") })?;
        let img2_fnv = u64::from_str_radix(toks[15], 16)
            .map_err(|e| TraceError::Parse { line: ln, message: format!("bad image checksum: {e}") })?;
        let expected_cycle = records.len() as u32;
        if nums[0] != expected_cycle {
            return parse_err(ln, format!("expected cycle {expected_cycle}, found {}", nums[0]));
        }

        let (ln1, l1) = rd.expect_next("an I1 line")?;
        let body1 = l1
            .strip_prefix("I1 ")
            .ok_or(TraceError::Parse { line: ln1, message: "expected an I1 line".into() })?;
        let image1 = OccupancyMatrix::from_bits(
            n_cols,
            n_rows,
            ImageTag::One,
            parse_hex_words(ln1, body1, n_bits)?,
        )
        .map_err(|m| TraceError::Parse { line: ln1, message: m })?;

        let (ln2, l2) = rd.expect_next("an I2 line")?;
        let body2 = l2
            .strip_prefix("I2 ")
            .ok_or(TraceError::Parse { line: ln2, message: "expected an I2 line".into() })?;
        let image2 = OccupancyMatrix::from_bits(
            n_cols,
            n_rows,
            ImageTag::Two,
            parse_hex_words(ln2, body2, n_bits)?,
        )
        .map_err(|m| TraceError::Parse { line: ln2, message: m })?;

        if image_checksum(&image1) != img1_fnv || image_checksum(&image2) != img2_fnv {
            return parse_err(ln, "image checksum does not match image data");
        }

        let (lnd, ld) = rd.expect_next("a D line")?;
        let move_destinations: Vec<u32> = if ld == "D" {
            Vec::new()
        } else if let Some(csv) = ld.strip_prefix("D ") {
            let mut v = Vec::new();
            for part in csv.split(',') {
                let d = part.parse::<u32>().map_err(|e| TraceError::Parse {
                    line: lnd,
                    message: format!("bad destination index '{part}': {e}"),
                })?;
                if d as usize >= n_bits {
                    return parse_err(lnd, format!("destination index {d} outside the lattice"));
                }
                v.push(d);
            }
            v
        } else {
            return parse_err(lnd, "expected a D line");
        };

        records.push(CycleRecord {
            cycle_index: nums[0],
            image1,
            image2,
            n_loaded: nums[1],
            n_moves_attempted: nums[2],
            n_moves_succeeded: nums[3],
            n_collateral_losses: nums[4],
            n_collateral_losses_arrivals: nums[5],
            n_shelving_losses: nums[6],
            n_vacuum_losses: nums[7],
            n_imaging_losses: nums[8],
            n_imaging_losses_arrivals: nums[9],
            n_background_gains: nums[10],
            stored_count_after: nums[11],
            true_stored_after: nums[12],
            move_destinations,
        });
    }

    Ok(TraceFile {
        seed,
        replica,
        n_cols,
        n_rows,
        config_toml,
        records,
    })
}

pub fn read_trace(path: &Path) -> Result<TraceFile, TraceError> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    parse_trace(&text)
}

/// Writes one occupancy state as a 0/1 grid, row 0 first.
pub fn write_grid<W: Write>(w: &mut W, n_cols: u32, n_rows: u32, bits: &BitGrid) -> io::Result<()> {
    debug_assert_eq!(bits.len(), n_cols as usize * n_rows as usize);
    let mut out = String::with_capacity(bits.len() + 64);
    writeln!(out, "# grid {n_cols} {n_rows}").expect("infallible");
    for row in 0..n_rows as usize {
        for col in 0..n_cols as usize {
            out.push(if bits.get(row * n_cols as usize + col) { '1' } else { '0' });
        }
        out.push('\n');
    }
    w.write_all(out.as_bytes())
}

/// Parses the grid format back, reporting the first offending line and
/// column on malformed input.
pub fn parse_grid(text: &str) -> Result<(u32, u32, BitGrid), TraceError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = match lines.next() {
        Some(h) => h,
        None => return parse_err(1, "empty grid file"),
    };
    let toks: Vec<&str> = header.split_whitespace().collect();
    let (n_cols, n_rows) = match toks.as_slice() {
        ["#", "grid", c, r] => {
            let c = c
                .parse::<u32>()
                .map_err(|e| TraceError::Parse { line: 1, message: format!("bad column count: {e}") })?;
            let r = r
                .parse::<u32>()
                .map_err(|e| TraceError::Parse { line: 1, message: format!("bad row count: {e}") })?;
            (c, r)
        }
        _ => return parse_err(1, "expected '# grid <n_cols> <n_rows>'"),
    };
    if n_cols == 0 || n_rows == 0 {
        return parse_err(1, "grid dimensions must be positive");
    }
    let mut bits = BitGrid::new(n_cols as usize * n_rows as usize);
    let mut row = 0usize;
    for (i, l) in lines {
        let ln = i + 1;
        if l.is_empty() {
            continue;
        }
        if row >= n_rows as usize {
            return parse_err(ln, format!("more than {n_rows} grid rows"));
        }
        if l.len() != n_cols as usize {
            return parse_err(
                ln,
                format!("row {row} has {} characters, expected {n_cols}", l.len()),
            );
        }
        for (col, ch) in l.bytes().enumerate() {
            match ch {
                b'0' => {}
                b'1' => bits.set(row * n_cols as usize + col),
                other => {
                    return parse_err(
                        ln,
                        format!(
                            "column {}: expected '0' or '1', found '{}'",
                            col + 1,
                            other as char
                        ),
                    )
                }
            }
        }
        row += 1;
    }
    if row != n_rows as usize {
        return parse_err(
            text.lines().count(),
            format!("found {row} grid rows, expected {n_rows}"),
        );
    }
    Ok((n_cols, n_rows, bits))
}

pub fn read_grid(path: &Path) -> Result<(u32, u32, BitGrid), TraceError> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    parse_grid(&text)
}
