//! ⁸⁷Rb line data, angular-momentum algebra and dynamic polarizabilities.

use std::path::Path;

use serde::Deserialize;

use crate::constants::{C, EPS0, HBAR};
use crate::error::{Error, Result};

/// Nuclear spin of ⁸⁷Rb.
pub const RB87_NUCLEAR_SPIN: f64 = 1.5;

/// First line of a transition-table file.
pub const TABLE_HEADER_TAG: &str = "# slowlight transition table v1";

const TABLE_COLUMNS: [&str; 6] = ["label", "lambda_nm", "reduced_dipole_Cm", "gamma0_rad_s", "J", "Jp"];

const BUNDLED_TABLE: &str = include_str!("../data/rb87_lines.csv");

// ---------------------------------------------------------------------------
// Angular momentum

fn doubled(j: f64, what: &str) -> Result<i64> {
    let t = 2.0 * j;
    if !t.is_finite() || (t - t.round()).abs() > 1e-9 {
        return Err(Error::Domain(format!("{what} = {j} is not a half-integer")));
    }
    Ok(t.round() as i64)
}

fn ln_factorial(n: i64) -> f64 {
    debug_assert!(n >= 0);
    (1..=n).map(|k| (k as f64).ln()).sum()
}

fn factorial(n: i64) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Triangle coefficient Δ(abc) with doubled arguments, or `None` if the
/// triangle condition fails.
fn triangle2(a: i64, b: i64, c: i64) -> Option<f64> {
    if (a + b + c) % 2 != 0 || c > a + b || c < (a - b).abs() {
        return None;
    }
    let (x, y, z, w) = ((a + b - c) / 2, (a - b + c) / 2, (-a + b + c) / 2, (a + b + c) / 2 + 1);
    Some((ln_factorial(x) + ln_factorial(y) + ln_factorial(z) - ln_factorial(w)).exp())
}

/// Wigner 3j symbol from doubled quantum numbers.
///
/// Arguments are first brought to a canonical column order and m sign, so
/// the permutation and reflection symmetries hold bit for bit.
pub fn wigner3j_doubled(j1: i64, j2: i64, j3: i64, m1: i64, m2: i64, m3: i64) -> f64 {
    let odd_j = ((j1 + j2 + j3) / 2) % 2 != 0;
    let sorted = |cols: [(i64, i64); 3]| {
        let mut c = cols;
        let mut swaps = 0;
        for i in 0..3 {
            for k in 0..2 - i {
                if c[k] < c[k + 1] {
                    c.swap(k, k + 1);
                    swaps += 1;
                }
            }
        }
        (c, swaps % 2 == 1)
    };
    let (c, odd_perm) = sorted([(j1, m1), (j2, m2), (j3, m3)]);
    let (r, odd_perm_r) = sorted([(j1, -m1), (j2, -m2), (j3, -m3)]);
    // repeated columns, or a reflection that maps onto the same columns with
    // the opposite phase, force a zero
    if odd_j && (c[0] == c[1] || c[1] == c[2] || (c == r && odd_perm == odd_perm_r)) {
        return 0.0;
    }
    let (c, flips) = if c >= r { (c, odd_perm as u8) } else { (r, odd_perm_r as u8 + 1) };
    let v = wigner3j_racah(c[0].0, c[1].0, c[2].0, c[0].1, c[1].1, c[2].1);
    if odd_j && flips % 2 == 1 {
        -v
    } else {
        v
    }
}

fn wigner3j_racah(j1: i64, j2: i64, j3: i64, m1: i64, m2: i64, m3: i64) -> f64 {
    if m1 + m2 + m3 != 0 || m1.abs() > j1 || m2.abs() > j2 || m3.abs() > j3 {
        return 0.0;
    }
    if (j1 + m1) % 2 != 0 || (j2 + m2) % 2 != 0 || (j3 + m3) % 2 != 0 {
        return 0.0;
    }
    let Some(delta) = triangle2(j1, j2, j3) else { return 0.0 };
    let h = |x: i64| x / 2;
    let pre = delta.sqrt()
        * (factorial(h(j1 + m1))
            * factorial(h(j1 - m1))
            * factorial(h(j2 + m2))
            * factorial(h(j2 - m2))
            * factorial(h(j3 + m3))
            * factorial(h(j3 - m3)))
        .sqrt();
    let kmin = 0.max(h(j2 - j3 - m1)).max(h(j1 - j3 + m2));
    let kmax = h(j1 + j2 - j3).min(h(j1 - m1)).min(h(j2 + m2));
    let mut sum = 0.0;
    for k in kmin..=kmax {
        let den = factorial(k)
            * factorial(h(j3 - j2 + m1) + k)
            * factorial(h(j3 - j1 - m2) + k)
            * factorial(h(j1 + j2 - j3) - k)
            * factorial(h(j1 - m1) - k)
            * factorial(h(j2 + m2) - k);
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign / den;
    }
    let phase = if h(j1 - j2 - m3).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    phase * pre * sum
}

/// Wigner 3j symbol `(j1 j2 j3; m1 m2 m3)` for half-integer arguments.
pub fn wigner3j(j1: f64, j2: f64, j3: f64, m1: f64, m2: f64, m3: f64) -> Result<f64> {
    let t = [
        doubled(j1, "j1")?,
        doubled(j2, "j2")?,
        doubled(j3, "j3")?,
        doubled(m1, "m1")?,
        doubled(m2, "m2")?,
        doubled(m3, "m3")?,
    ];
    if t[..3].iter().any(|&j| j < 0) {
        return Err(Error::Domain("negative angular momentum".into()));
    }
    Ok(wigner3j_doubled(t[0], t[1], t[2], t[3], t[4], t[5]))
}

/// Wigner 6j symbol `{j1 j2 j3; j4 j5 j6}`.
pub fn wigner6j(j1: f64, j2: f64, j3: f64, j4: f64, j5: f64, j6: f64) -> Result<f64> {
    let (a, b, c, d, e, f) = (
        doubled(j1, "j1")?,
        doubled(j2, "j2")?,
        doubled(j3, "j3")?,
        doubled(j4, "j4")?,
        doubled(j5, "j5")?,
        doubled(j6, "j6")?,
    );
    let tri = [triangle2(a, b, c), triangle2(a, e, f), triangle2(d, b, f), triangle2(d, e, c)];
    if tri.iter().any(Option::is_none) {
        return Ok(0.0);
    }
    let pre: f64 = tri.iter().map(|t| t.unwrap().sqrt()).product();
    let s = [(a + b + c) / 2, (a + e + f) / 2, (d + b + f) / 2, (d + e + c) / 2];
    let q = [(a + b + d + e) / 2, (b + c + e + f) / 2, (a + c + d + f) / 2];
    let tmin = *s.iter().max().unwrap();
    let tmax = *q.iter().min().unwrap();
    let mut sum = 0.0;
    for t in tmin..=tmax {
        let num = (ln_factorial(t + 1)
            - s.iter().map(|&x| ln_factorial(t - x)).sum::<f64>()
            - q.iter().map(|&x| ln_factorial(x - t)).sum::<f64>())
        .exp();
        sum += if t % 2 == 0 { num } else { -num };
    }
    Ok(pre * sum)
}

/// Clebsch–Gordan amplitude of the dipole channel `|F mF⟩ → |F′ mF+q⟩`.
///
/// This is `⟨F mF; 1 q | F′ mF+q⟩`, so the stretched (cycling) channel has
/// unit weight and the weights into a fixed excited sublevel sum to one.
pub fn clebsch_gordan_factor(f: f64, mf: f64, q: i32, fp: f64) -> Result<f64> {
    if !(-1..=1).contains(&q) {
        return Err(Error::Domain(format!("q = {q} is not a spherical dipole component")));
    }
    let (tf, tm, tfp) = (doubled(f, "F")?, doubled(mf, "mF")?, doubled(fp, "F'")?);
    if tf < 0 || tfp < 0 || tm.abs() > tf || (tf + tm) % 2 != 0 {
        return Err(Error::Domain(format!("invalid level |{f}, {mf}⟩")));
    }
    let tq = 2 * q as i64;
    let tmp = tm + tq;
    let w = wigner3j_doubled(tf, 2, tfp, tm, tq, -tmp);
    // (−1)^{F − 1 + m′}
    let phase = if ((tf - 2 + tmp) / 2).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    Ok(phase * ((tfp + 1) as f64).sqrt() * w)
}

/// Relative hyperfine line strength `S_FF′ = (2F′+1)(2J+1){J J′ 1; F′ F I}²`.
///
/// For fixed ground `F` the strengths sum to one over `F′`.
pub fn hyperfine_strength(j: f64, jp: f64, i: f64, f: f64, fp: f64) -> Result<f64> {
    let w = wigner6j(j, jp, 1.0, fp, f, i)?;
    Ok((2.0 * fp + 1.0) * (2.0 * j + 1.0) * w * w)
}

/// Share of the `J′ → J` decay of any `|F′ m′⟩` sublevel that ends in ground level `F`.
pub fn branching_ratio(j: f64, jp: f64, i: f64, f: f64, fp: f64) -> Result<f64> {
    let s = hyperfine_strength(j, jp, i, f, fp)?;
    Ok(s * (2.0 * f + 1.0) * (2.0 * jp + 1.0) / ((2.0 * fp + 1.0) * (2.0 * j + 1.0)))
}

/// Relative dipole strength of the channel `|F mF⟩ → |F′ mF+q⟩`, in units
/// of the full line strength: `branching · |C|²`. Equal to one for the
/// cycling transition.
pub fn channel_strength(j: f64, jp: f64, i: f64, f: f64, mf: f64, q: i32, fp: f64) -> Result<f64> {
    let c = clebsch_gordan_factor(f, mf, q, fp)?;
    Ok(branching_ratio(j, jp, i, f, fp)? * c * c)
}

/// Allowed total angular momenta `|J−I| … J+I`.
pub fn hyperfine_levels(j: f64, i: f64) -> Vec<f64> {
    let lo = (j - i).abs();
    let n = ((j + i - lo).round() as usize) + 1;
    (0..n).map(|k| lo + k as f64).collect()
}

// ---------------------------------------------------------------------------
// Transition data

/// One ground-state line.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Line {
    pub label: String,
    pub lambda_nm: f64,
    /// `⟨J‖d‖J′⟩` (C·m).
    pub reduced_dipole_cm: f64,
    /// Natural decay rate of the excited level (rad/s).
    pub gamma0: f64,
    pub j: f64,
    pub jp: f64,
}

impl Line {
    /// Angular frequency (rad/s).
    pub fn omega(&self) -> f64 {
        crate::constants::nm_to_omega(self.lambda_nm)
    }

    /// Squared dipole per Cartesian component, `|⟨J‖d‖J′⟩|²/3` (C²m²).
    ///
    /// Reduced elements follow the convention in which the line strength
    /// summed over excited sublevels and polarizations equals `|⟨J‖d‖J′⟩|²`.
    pub fn dipole_sq(&self) -> f64 {
        self.reduced_dipole_cm.powi(2) / 3.0
    }

    /// Spontaneous rate implied by the reduced dipole.
    pub fn rate_from_dipole(&self) -> f64 {
        let w = self.omega();
        w.powi(3) / (3.0 * std::f64::consts::PI * EPS0 * HBAR * C.powi(3)) * (2.0 * self.j + 1.0)
            / (2.0 * self.jp + 1.0)
            * self.reduced_dipole_cm.powi(2)
    }
}

/// Hyperfine bookkeeping for the ground manifold and each excited level.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperfine {
    pub nuclear_spin: f64,
    pub ground_f: Vec<f64>,
    /// Excited F′ values per line, same order as the table.
    pub excited_f: Vec<Vec<f64>>,
}

impl Hyperfine {
    pub fn m_values(f: f64) -> Vec<f64> {
        let n = (2.0 * f).round() as usize + 1;
        (0..n).map(|k| -f + k as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    pub lines: Vec<Line>,
    pub hyperfine: Hyperfine,
}

#[derive(Deserialize)]
struct Row {
    label: String,
    lambda_nm: f64,
    #[serde(rename = "reduced_dipole_Cm")]
    reduced_dipole_cm: f64,
    gamma0_rad_s: f64,
    #[serde(rename = "J")]
    j: f64,
    #[serde(rename = "Jp")]
    jp: f64,
}

impl TransitionTable {
    /// The ⁸⁷Rb table shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_csv_str(BUNDLED_TABLE).expect("bundled transition table parses")
    }

    /// `dir/rb87_lines.csv` if present, else the bundled table.
    pub fn load(dir: Option<&Path>) -> Result<Self> {
        match dir.map(|d| d.join("rb87_lines.csv")) {
            Some(p) if p.exists() => Self::from_path(&p),
            _ => Ok(Self::bundled()),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    /// Strict parse: version tag, exact column set, positive data, a D2 row.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(tag) if tag.trim() == TABLE_HEADER_TAG => {}
            other => return Err(Error::Parse(format!("expected '{TABLE_HEADER_TAG}', found {other:?}"))),
        }
        let body: String = lines.collect::<Vec<_>>().join("\n");
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
        let headers = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols != TABLE_COLUMNS {
            return Err(Error::Parse(format!("columns {cols:?} differ from {TABLE_COLUMNS:?}")));
        }
        let mut out = Vec::new();
        for (n, rec) in rdr.deserialize::<Row>().enumerate() {
            let r = rec.map_err(|e| Error::Parse(format!("row {}: {e}", n + 1)))?;
            if !(r.lambda_nm > 0.0 && r.gamma0_rad_s > 0.0 && r.reduced_dipole_cm > 0.0) {
                return Err(Error::Parse(format!("row {}: wavelength, rate and dipole must be positive", n + 1)));
            }
            doubled(r.j, "J")?;
            doubled(r.jp, "Jp")?;
            out.push(Line {
                label: r.label,
                lambda_nm: r.lambda_nm,
                reduced_dipole_cm: r.reduced_dipole_cm,
                gamma0: r.gamma0_rad_s,
                j: r.j,
                jp: r.jp,
            });
        }
        if !out.iter().any(|l| l.label == "D2") {
            return Err(Error::Parse("table has no D2 row".into()));
        }
        let i = RB87_NUCLEAR_SPIN;
        let hyperfine = Hyperfine {
            nuclear_spin: i,
            ground_f: hyperfine_levels(out[0].j, i),
            excited_f: out.iter().map(|l| hyperfine_levels(l.jp, i)).collect(),
        };
        Ok(TransitionTable { lines: out, hyperfine })
    }

    pub fn line(&self, label: &str) -> Option<&Line> {
        self.lines.iter().find(|l| l.label == label)
    }

    pub fn d2(&self) -> &Line {
        self.line("D2").expect("validated at parse")
    }

    /// Only the D1 and D2 rows.
    pub fn d_lines_only(&self) -> Self {
        let keep: Vec<usize> = (0..self.lines.len()).filter(|&k| matches!(self.lines[k].label.as_str(), "D1" | "D2")).collect();
        TransitionTable {
            lines: keep.iter().map(|&k| self.lines[k].clone()).collect(),
            hyperfine: Hyperfine {
                nuclear_spin: self.hyperfine.nuclear_spin,
                ground_f: self.hyperfine.ground_f.clone(),
                excited_f: keep.iter().map(|&k| self.hyperfine.excited_f[k].clone()).collect(),
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Polarizability

/// Frequency argument: real ω or imaginary iξ (rad/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Frequency {
    Real(f64),
    Imaginary(f64),
}

/// Ground-state dynamic polarizability (SI, C·m²/V).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Polarizability {
    pub alpha_s: f64,
    /// Fine-structure vector polarizability of the J = 1/2 ground level.
    pub alpha_v: f64,
    pub omega: Frequency,
}

impl Polarizability {
    /// Vector polarizability of hyperfine level `F`, normalized so that the
    /// light shift reads `−|E|²/4 · (α_s + C_z · α_v^F · mF/(2F))`.
    pub fn alpha_v_hyperfine(&self, j: f64, i: f64, f: f64) -> Result<f64> {
        if f == 0.0 {
            return Ok(0.0);
        }
        let w = wigner6j(f, 1.0, f, j, i, j)?;
        let phase = if ((j + i + f + 1.0).round() as i64).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        let factor = (2.0 * f * (2.0 * f + 1.0) * (j + 1.0) * (2.0 * j + 1.0) / ((f + 1.0) * j)).sqrt();
        Ok(phase * factor * w * self.alpha_v)
    }
}

/// Minimum separation from a line, in natural linewidths, on the real axis.
pub const RESONANCE_GUARD: f64 = 10.0;

/// Scalar and vector polarizability of the ground level from the table lines.
pub fn polarizability(table: &TransitionTable, omega: Frequency) -> Result<Polarizability> {
    let mut alpha_s = 0.0;
    let mut alpha_v = 0.0;
    for l in &table.lines {
        let wk = l.omega();
        let s2 = l.reduced_dipole_cm.powi(2) / HBAR;
        match omega {
            Frequency::Real(w) => {
                if (w - wk).abs() < RESONANCE_GUARD * l.gamma0 {
                    return Err(Error::Resonance(format!("{:.3} nm lies within {RESONANCE_GUARD} linewidths of {}", 2.0 * std::f64::consts::PI * crate::constants::C_NM / w, l.label)));
                }
                alpha_s += 2.0 / 3.0 * s2 * wk / (wk * wk - w * w);
                alpha_v += vector_weight(l.j, l.jp)? * s2 * (1.0 / (wk - w) - 1.0 / (wk + w));
            }
            Frequency::Imaginary(xi) => {
                alpha_s += 2.0 / 3.0 * s2 * wk / (wk * wk + xi * xi);
            }
        }
    }
    Ok(Polarizability { alpha_s, alpha_v, omega })
}

/// `(−1)^{J+J′+1} √(6J(2J+1)/(J+1)) {1 1 1; J J J′}`.
fn vector_weight(j: f64, jp: f64) -> Result<f64> {
    let w = wigner6j(1.0, 1.0, 1.0, j, j, jp)?;
    let phase = if ((j + jp + 1.0).round() as i64).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    Ok(phase * (6.0 * j * (2.0 * j + 1.0) / (j + 1.0)).sqrt() * w)
}

/// Atomic unit of polarizability (C·m²/V).
pub const AU_POLARIZABILITY: f64 = 1.648_777_274_36e-41;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn known_3j_values() {
        assert_relative_eq!(wigner3j(1.0, 0.0, 1.0, 0.0, 0.0, 0.0).unwrap(), -1.0 / 3f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(wigner3j(1.0, 1.0, 2.0, 1.0, 1.0, -2.0).unwrap(), 1.0 / 5f64.sqrt(), epsilon = 1e-14);
        assert_eq!(wigner3j(1.0, 1.0, 3.0, 0.0, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(wigner3j(1.0, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap(), 0.0);
        assert!(wigner3j(0.3, 1.0, 1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn known_6j_value() {
        // {1 1 1; 1 1 1} = 1/6
        assert_relative_eq!(wigner6j(1.0, 1.0, 1.0, 1.0, 1.0, 1.0).unwrap(), 1.0 / 6.0, epsilon = 1e-14);
        // {1/2 1/2 1; 1/2 1/2 0} = 1/2 · (−1)^{...}: |value| = 1/2
        assert_relative_eq!(wigner6j(0.5, 0.5, 1.0, 0.5, 0.5, 0.0).unwrap().abs(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn cycling_and_forbidden_channels() {
        assert_relative_eq!(clebsch_gordan_factor(2.0, 2.0, 1, 3.0).unwrap().powi(2), 1.0, epsilon = 1e-14);
        assert_eq!(clebsch_gordan_factor(2.0, 2.0, 1, 2.0).unwrap(), 0.0);
        assert!(clebsch_gordan_factor(2.0, 2.0, 2, 3.0).is_err());
        // σ⁻ from the stretched state into F′ = 3
        assert_relative_eq!(clebsch_gordan_factor(2.0, 2.0, -1, 3.0).unwrap().powi(2), 1.0 / 15.0, epsilon = 1e-14);
    }

    #[test]
    fn excited_sublevel_decay_fractions_sum_to_one() {
        let t = TransitionTable::bundled();
        let (j, i) = (0.5, RB87_NUCLEAR_SPIN);
        for line in &t.lines {
            for fp in hyperfine_levels(line.jp, i) {
                for mp in Hyperfine::m_values(fp) {
                    let mut total = 0.0;
                    for f in hyperfine_levels(j, i) {
                        let s = branching_ratio(j, line.jp, i, f, fp).unwrap();
                        for q in -1..=1 {
                            let m = mp - q as f64;
                            if m.abs() <= f {
                                total += s * clebsch_gordan_factor(f, m, q, fp).unwrap().powi(2);
                            }
                        }
                    }
                    assert!((total - 1.0).abs() < 1e-12, "{} F'={fp} m'={mp}: {total}", line.label);
                }
            }
        }
    }

    #[test]
    fn bundled_table_is_consistent() {
        let t = TransitionTable::bundled();
        for l in &t.lines {
            let rel = (l.rate_from_dipole() - l.gamma0).abs() / l.gamma0;
            assert!(rel < 0.01, "{}: {rel}", l.label);
        }
        assert_eq!(t.hyperfine.ground_f, vec![1.0, 2.0]);
        assert_eq!(t.hyperfine.excited_f[t.lines.iter().position(|l| l.label == "D2").unwrap()], vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn strict_table_parse() {
        let bad_col = format!("{TABLE_HEADER_TAG}\nlabel,lambda_nm,reduced_dipole_Cm,gamma0_rad_s,J,Jp,extra\nD2,780,1e-29,3e7,0.5,1.5,1\n");
        assert!(TransitionTable::from_csv_str(&bad_col).is_err());
        let no_tag = "label,lambda_nm,reduced_dipole_Cm,gamma0_rad_s,J,Jp\nD2,780,1e-29,3e7,0.5,1.5\n";
        assert!(TransitionTable::from_csv_str(no_tag).is_err());
        let no_d2 = format!("{TABLE_HEADER_TAG}\nlabel,lambda_nm,reduced_dipole_Cm,gamma0_rad_s,J,Jp\nD1,795,1e-29,3e7,0.5,0.5\n");
        assert!(TransitionTable::from_csv_str(&no_d2).is_err());
    }

    #[test]
    fn static_polarizability_matches_direct_sum() {
        let t = TransitionTable::bundled().d_lines_only();
        let a = polarizability(&t, Frequency::Real(0.0)).unwrap();
        let mut direct = 0.0;
        for l in &t.lines {
            let w = 2.0 * std::f64::consts::PI * 299_792_458.0 / (l.lambda_nm * 1e-9);
            direct += 2.0 * l.reduced_dipole_cm * l.reduced_dipole_cm / (3.0 * HBAR * w);
        }
        assert_relative_eq!(a.alpha_s, direct, max_relative = 1e-10);
        // D-line part of the ⁸⁷Rb static polarizability is ≈ 310 a.u.
        let au = a.alpha_s / AU_POLARIZABILITY;
        assert!(au > 290.0 && au < 330.0, "{au}");
        assert_eq!(a.alpha_v, 0.0);
    }

    #[test]
    fn sign_flip_across_d2() {
        let t = TransitionTable::bundled();
        let red = polarizability(&t, Frequency::Real(crate::constants::nm_to_omega(784.5))).unwrap();
        let blue = polarizability(&t, Frequency::Real(crate::constants::nm_to_omega(737.0))).unwrap();
        assert!(red.alpha_s > 0.0);
        assert!(blue.alpha_s < 0.0);
        let near = crate::constants::nm_to_omega(t.d2().lambda_nm) + 3.0 * t.d2().gamma0;
        assert!(matches!(polarizability(&t, Frequency::Real(near)), Err(Error::Resonance(_))));
    }

    #[test]
    fn stretched_state_vector_shift_matches_fine_structure() {
        // |F=2, mF=2⟩ = |mJ=1/2⟩|mI=3/2⟩, so α_v^F·mF/(2F) = α_v^J·mJ/(2J)
        let t = TransitionTable::bundled();
        let p = polarizability(&t, Frequency::Real(crate::constants::nm_to_omega(784.5))).unwrap();
        let av2 = p.alpha_v_hyperfine(0.5, 1.5, 2.0).unwrap();
        assert_relative_eq!(av2 * 2.0 / 4.0, p.alpha_v * 0.5, max_relative = 1e-12);
        // F = 1 has the opposite Landé-like sign
        let av1 = p.alpha_v_hyperfine(0.5, 1.5, 1.0).unwrap();
        assert!(av1 * av2 < 0.0);
    }

    #[test]
    fn vector_shift_matches_two_level_rotating_wave() {
        // Close to D2 and far from D1 only the D2 term matters; σ⁺ light on
        // |J=1/2, mJ=1/2⟩ couples only to mJ′=3/2 with relative strength 1
        // while σ⁻ couples to mJ′=−1/2 with 1/3.
        let mut t = TransitionTable::bundled();
        t.lines.retain(|l| l.label == "D2");
        let w = crate::constants::nm_to_omega(780.4);
        let p = polarizability(&t, Frequency::Real(w)).unwrap();
        let plus = p.alpha_s + p.alpha_v * 0.5;
        let minus = p.alpha_s - p.alpha_v * 0.5;
        let ratio = plus / minus;
        // counter-rotating terms add a small correction
        assert!((ratio - 3.0).abs() < 0.01, "{ratio}");
        // near D1 σ⁺ light cannot excite mJ = +1/2
        let mut t1 = TransitionTable::bundled();
        t1.lines.retain(|l| l.label == "D1");
        let p1 = polarizability(&t1, Frequency::Real(crate::constants::nm_to_omega(795.2))).unwrap();
        assert!((p1.alpha_s + 0.5 * p1.alpha_v).abs() < 0.01 * p1.alpha_s.abs());
    }

    #[test]
    fn hyperfine_strengths_sum_over_excited_levels() {
        for f in [1.0, 2.0] {
            for jp in [0.5, 1.5] {
                let s: f64 = hyperfine_levels(jp, 1.5).iter().map(|&fp| hyperfine_strength(0.5, jp, 1.5, f, fp).unwrap()).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        // F=2 → F′=3 on D2 is 7/10; its cycling channel carries the whole line
        assert_relative_eq!(hyperfine_strength(0.5, 1.5, 1.5, 2.0, 3.0).unwrap(), 0.7, epsilon = 1e-12);
        assert_relative_eq!(channel_strength(0.5, 1.5, 1.5, 2.0, 2.0, 1, 3.0).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn imaginary_axis_monotone() {
        let t = TransitionTable::bundled();
        let mut prev = f64::INFINITY;
        for k in 0..60 {
            let xi = 10f64.powf(12.0 + k as f64 * 0.1);
            let a = polarizability(&t, Frequency::Imaginary(xi)).unwrap().alpha_s;
            assert!(a > 0.0 && a < prev);
            prev = a;
        }
        // α(iξ) ∝ 1/ξ² far above every line
        let a0 = polarizability(&t, Frequency::Imaginary(0.0)).unwrap().alpha_s;
        assert!(prev < 1e-4 * a0);
    }
}
