//! Plain-text model format.
//!
//! ```text
//! geoflow-model v1
//! input 2
//! pair 0 0x1.999999999999ap-4 0x1.999999999999ap-4 0x1p-1 1 region
//! layer 0 flow 4x4 euler,euler pair0.0,pair0.1
//! ...
//! end
//! ```
//!
//! Every real number is written as a C99 hexadecimal float so that a round
//! trip reproduces each `f64` bit for bit.

use std::fmt::Write as _;

use super::{Block, Layer, Network, StepBinding, StepConstraint, StepPair};
use crate::error::{Error, Result};
use crate::fields::{
    lift_hamiltonian, Activation, ActivationField, GradField, LinearField, MassField, MetricField, Mlp, SeparableField,
    SphereField, SphereParam, VectorField, VolumeSplitField,
};
use crate::flows::{FlowStep, Scheme};
use crate::linalg::Mat;
use crate::params::{Weight, WeightKind};

pub const HEADER: &str = "geoflow-model v1";

/// `%a`-style hexadecimal representation of `x`.
pub fn fmt_hex(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let mant = bits & ((1u64 << 52) - 1);
    let (lead, e) = match exp {
        0 if mant == 0 => return format!("{sign}0x0p+0"),
        0 => (0, -1022),
        _ => (1, exp - 1023),
    };
    let mut digits = format!("{mant:013x}");
    while digits.ends_with('0') {
        digits.pop();
    }
    let frac = if digits.is_empty() { String::new() } else { format!(".{digits}") };
    let es = if e >= 0 { format!("+{e}") } else { e.to_string() };
    format!("{sign}0x{lead}{frac}p{es}")
}

/// Inverse of [`fmt_hex`]; also accepts ordinary decimal notation.
pub fn parse_hex(s: &str) -> Option<f64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let Some(hex) = body.strip_prefix("0x") else {
        return s.parse().ok();
    };
    let (mantissa, exp) = hex.split_once('p')?;
    let exp: i64 = exp.parse().ok()?;
    let (lead, frac) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if frac.len() > 13 || !frac.chars().all(|c| c.is_ascii_hexdigit()) {
        return None;
    }
    let mut frac_bits = if frac.is_empty() { 0 } else { u64::from_str_radix(frac, 16).ok()? };
    frac_bits <<= 4 * (13 - frac.len());
    let bits = match lead {
        "1" => {
            let biased = exp + 1023;
            if !(1..=2046).contains(&biased) {
                return None;
            }
            ((biased as u64) << 52) | frac_bits
        }
        "0" if frac_bits == 0 => 0,
        "0" if exp == -1022 => frac_bits,
        _ => return None,
    };
    let v = f64::from_bits(bits);
    Some(if neg { -v } else { v })
}

struct Writer {
    out: String,
}

impl Writer {
    fn line(&mut self, s: impl AsRef<str>) {
        self.out.push_str(s.as_ref());
        self.out.push('\n');
    }

    fn values(&mut self, tag: &str, head: String, v: &[f64]) {
        let _ = write!(self.out, "{tag} {head}");
        for (i, x) in v.iter().enumerate() {
            self.out.push(if i % 8 == 0 { '\n' } else { ' ' });
            self.out.push_str(&fmt_hex(*x));
        }
        self.out.push('\n');
    }

    fn vec(&mut self, v: &[f64]) {
        self.values("vec", v.len().to_string(), v);
    }

    fn mat(&mut self, kind: &str, m: &Mat) {
        self.values("mat", format!("{kind} {} {}", m.rows(), m.cols()), m.data());
    }

    fn weight(&mut self, w: &Weight) {
        let kind = match w.kind() {
            WeightKind::Free => "free",
            WeightKind::Orthogonal => "ortho",
        };
        self.mat(kind, w.raw());
    }

    fn mlp(&mut self, m: &Mlp) {
        self.line(format!("mlp {} {} {} {}", m.input_dim(), m.hidden_dim(), m.output_dim(), fmt_hex(m.act.slope())));
        self.weight(&m.outer);
        self.weight(&m.inner);
        self.vec(&m.bias);
    }

    fn grad(&mut self, g: &GradField) {
        self.line(format!(
            "grad {} {} {} {} {}",
            fmt_hex(g.sign),
            g.train_alpha as u8,
            g.alpha_nonneg as u8,
            fmt_hex(g.act.slope()),
            g.width()
        ));
        self.weight(&g.a);
        self.vec(&g.b);
        self.vec(&g.alpha);
    }

    fn field(&mut self, f: &VectorField) {
        match f {
            VectorField::Zero { dim } => self.line(format!("zero {dim}")),
            VectorField::Linear(l) => {
                self.line("linear");
                self.weight(&l.b);
            }
            VectorField::Grad(g) => self.grad(g),
            VectorField::Activation(a) => {
                self.line(format!("activation {}", fmt_hex(a.act.slope())));
                self.weight(&a.a);
                self.vec(&a.b);
            }
            VectorField::Mlp(m) => self.mlp(m),
            VectorField::Sphere(s) => match &s.param {
                SphereParam::Skew { net } => {
                    self.line(format!("sphere skew {}", s.dim));
                    self.mlp(net);
                }
                SphereParam::Projector { b, c, d, act } => {
                    self.line(format!("sphere projector {}", fmt_hex(act.slope())));
                    self.weight(b);
                    self.weight(c);
                    self.vec(d);
                }
            },
            VectorField::Mass(m) => {
                self.line(format!("mass {}", m.dim));
                self.mlp(&m.net);
            }
            VectorField::VolumeSplit(v) => {
                self.line("volume");
                self.mlp(&v.u);
                self.mlp(&v.v);
            }
            VectorField::Metric(m) => {
                self.line(format!("metric {}", fmt_hex(m.act.slope())));
                self.weight(&m.w);
                self.vec(&m.b);
                self.mat("fixed", &m.m);
            }
            VectorField::Separable(s) => {
                self.line("separable");
                self.grad(&s.kinetic);
                self.grad(&s.potential);
            }
            VectorField::Lifted(l) => {
                self.line("lifted");
                self.field(l.base());
            }
        }
    }
}

fn bind_token(b: &StepBinding, h: f64) -> String {
    match b {
        StepBinding::Own => format!("own {}", fmt_hex(h)),
        StepBinding::Fixed => format!("fixed {}", fmt_hex(h)),
        StepBinding::Pair { pair, which, frac } => format!("pair {pair} {which} {}", fmt_hex(*frac)),
    }
}

pub fn write_model(net: &Network) -> String {
    let mut w = Writer { out: String::new() };
    w.line(HEADER);
    w.line(format!("input {}", net.input_dim));
    w.line(format!("pairs {}", net.pairs.len()));
    for (i, p) in net.pairs.iter().enumerate() {
        w.line(format!(
            "pair {i} {} {} {} {} {}",
            fmt_hex(p.h[0]),
            fmt_hex(p.h[1]),
            fmt_hex(p.a),
            p.substeps,
            p.constraint.name()
        ));
    }
    w.line(format!("layers {}", net.layers.len()));
    for (i, layer) in net.layers.iter().enumerate() {
        let dims = format!("{}x{}", layer.input_dim(), layer.output_dim());
        match layer {
            Layer::Flow(b) => {
                let schemes: Vec<String> = b.steps.iter().map(|s| s.scheme().name()).collect();
                let hs: Vec<String> = b.steps.iter().zip(&b.bind).map(|(s, bd)| fmt_hex(net.step_h(s, bd))).collect();
                w.line(format!("layer {i} flow {dims} {} {}", schemes.join(","), hs.join(",")));
                w.line(format!("repeat {} steps {}", b.repeat, b.steps.len()));
                for (j, (s, bd)) in b.steps.iter().zip(&b.bind).enumerate() {
                    w.line(format!("step {j} {} {}", s.scheme().name(), bind_token(bd, s.h())));
                    w.field(s.field());
                }
            }
            Layer::Lift { weight, scale, constrained } => {
                w.line(format!("layer {i} lift {dims} - {}", fmt_hex(*scale)));
                w.line(format!("constrained {}", *constrained as u8));
                w.weight(weight);
            }
            Layer::Project { weight, constrained } => {
                w.line(format!("layer {i} project {dims} - -"));
                w.line(format!("constrained {}", *constrained as u8));
                w.weight(weight);
            }
            Layer::Affine { weight, bias, constrained } => {
                w.line(format!("layer {i} affine {dims} - -"));
                w.line(format!("constrained {}", *constrained as u8));
                w.weight(weight);
                w.vec(bias);
            }
            Layer::MassLift { .. } => w.line(format!("layer {i} mass_lift {dims} - -")),
            Layer::MassProject { .. } => w.line(format!("layer {i} mass_project {dims} - -")),
        }
    }
    w.line("end");
    w.out
}

struct Reader<'a> {
    toks: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        let toks = text
            .lines()
            .enumerate()
            .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
            .collect();
        Reader { toks, pos: 0 }
    }

    fn line(&self) -> usize {
        self.toks.get(self.pos.min(self.toks.len().saturating_sub(1))).map_or(0, |t| t.0)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { line: self.line(), msg: msg.into() }
    }

    fn next(&mut self) -> Result<&'a str> {
        let t = self.toks.get(self.pos).map(|t| t.1).ok_or_else(|| self.err("unexpected end of file"))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, lit: &str) -> Result<()> {
        let t = self.next()?;
        if t != lit {
            self.pos -= 1;
            return Err(self.err(format!("expected '{lit}', found '{t}'")));
        }
        Ok(())
    }

    fn usize(&mut self) -> Result<usize> {
        let t = self.next()?;
        t.parse().map_err(|_| self.err(format!("expected an integer, found '{t}'")))
    }

    fn real(&mut self) -> Result<f64> {
        let t = self.next()?;
        parse_hex(t).ok_or_else(|| self.err(format!("expected a number, found '{t}'")))
    }

    fn flag(&mut self) -> Result<bool> {
        match self.next()? {
            "0" => Ok(false),
            "1" => Ok(true),
            t => Err(self.err(format!("expected 0 or 1, found '{t}'"))),
        }
    }

    fn act(&mut self) -> Result<Activation> {
        let s = self.real()?;
        Activation::leaky_max(s).map_err(|e| self.err(e.to_string()))
    }

    fn vec(&mut self) -> Result<Vec<f64>> {
        self.expect("vec")?;
        let n = self.usize()?;
        (0..n).map(|_| self.real()).collect()
    }

    fn mat(&mut self) -> Result<(String, Mat)> {
        self.expect("mat")?;
        let kind = self.next()?.to_string();
        let r = self.usize()?;
        let c = self.usize()?;
        let data = (0..r * c).map(|_| self.real()).collect::<Result<Vec<_>>>()?;
        Ok((kind, Mat::from_vec(r, c, data)?))
    }

    fn weight(&mut self) -> Result<Weight> {
        let (kind, m) = self.mat()?;
        match kind.as_str() {
            "free" => Ok(Weight::free(m)),
            "ortho" => Weight::orthogonal(m),
            k => Err(self.err(format!("unknown weight kind '{k}'"))),
        }
    }

    fn mlp(&mut self) -> Result<Mlp> {
        self.expect("mlp")?;
        let (_i, _h, _o) = (self.usize()?, self.usize()?, self.usize()?);
        let act = self.act()?;
        let outer = self.weight()?;
        let inner = self.weight()?;
        let bias = self.vec()?;
        if outer.cols() != inner.rows() || bias.len() != inner.rows() {
            return Err(self.err("inconsistent mlp shapes"));
        }
        Ok(Mlp { outer, inner, bias, act })
    }

    fn grad(&mut self) -> Result<GradField> {
        self.expect("grad")?;
        let sign = self.real()?;
        let train_alpha = self.flag()?;
        let alpha_nonneg = self.flag()?;
        let act = self.act()?;
        let _width = self.usize()?;
        let a = self.weight()?;
        let b = self.vec()?;
        let alpha = self.vec()?;
        let mut g = GradField::new(a, b, alpha, sign, act)?;
        g.train_alpha = train_alpha;
        g.alpha_nonneg = alpha_nonneg;
        Ok(g)
    }

    fn field(&mut self) -> Result<VectorField> {
        let tag = self.next()?;
        Ok(match tag {
            "zero" => VectorField::Zero { dim: self.usize()? },
            "linear" => {
                let w = self.weight()?;
                LinearField::new(w.raw().clone())?.into()
            }
            "grad" => {
                self.pos -= 1;
                self.grad()?.into()
            }
            "activation" => {
                let act = self.act()?;
                let a = self.weight()?;
                let b = self.vec()?;
                ActivationField::new(a, b, act)?.into()
            }
            "mlp" => {
                self.pos -= 1;
                self.mlp()?.into()
            }
            "sphere" => match self.next()? {
                "skew" => {
                    let n = self.usize()?;
                    SphereField::skew(n, self.mlp()?)?.into()
                }
                "projector" => {
                    let act = self.act()?;
                    let b = self.weight()?;
                    let c = self.weight()?;
                    let d = self.vec()?;
                    SphereField::projector(b.raw().clone(), c.raw().clone(), d, act)?.into()
                }
                t => return Err(self.err(format!("unknown sphere parameterization '{t}'"))),
            },
            "mass" => {
                let n = self.usize()?;
                MassField::new(n, self.mlp()?)?.into()
            }
            "volume" => {
                let u = self.mlp()?;
                let v = self.mlp()?;
                VolumeSplitField::new(u, v)?.into()
            }
            "metric" => {
                let act = self.act()?;
                let w = self.weight()?;
                let b = self.vec()?;
                let (_, m) = self.mat()?;
                MetricField::new(w.raw().clone(), b, m, act)?.into()
            }
            "separable" => {
                let k = self.grad()?;
                let v = self.grad()?;
                SeparableField::new(k, v)?.into()
            }
            "lifted" => lift_hamiltonian(self.field()?)?,
            t => return Err(self.err(format!("unknown field kind '{t}'"))),
        })
    }

    fn dims(&mut self) -> Result<(usize, usize)> {
        let t = self.next()?;
        let (a, b) = t.split_once('x').ok_or_else(|| self.err(format!("bad dims '{t}'")))?;
        match (a.parse(), b.parse()) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            _ => Err(self.err(format!("bad dims '{t}'"))),
        }
    }
}

pub fn read_model(text: &str) -> Result<Network> {
    let mut r = Reader::new(text);
    r.expect("geoflow-model")?;
    r.expect("v1")?;
    r.expect("input")?;
    let mut net = Network::new(r.usize()?);
    r.expect("pairs")?;
    let np = r.usize()?;
    for i in 0..np {
        r.expect("pair")?;
        if r.usize()? != i {
            return Err(r.err("pair records out of order"));
        }
        let h1 = r.real()?;
        let h2 = r.real()?;
        let a = r.real()?;
        let s = r.usize()?;
        let c = r.next()?;
        let constraint = StepConstraint::parse(c).ok_or_else(|| r.err(format!("unknown constraint '{c}'")))?;
        net.add_pair(StepPair { h: [h1, h2], a, substeps: s, constraint });
    }
    r.expect("layers")?;
    let nl = r.usize()?;
    for i in 0..nl {
        r.expect("layer")?;
        if r.usize()? != i {
            return Err(r.err("layer records out of order"));
        }
        let kind = r.next()?;
        let (din, dout) = r.dims()?;
        let _schemes = r.next()?;
        let hs = r.next()?;
        let layer = match kind {
            "flow" => {
                r.expect("repeat")?;
                let repeat = r.usize()?;
                r.expect("steps")?;
                let n = r.usize()?;
                let mut steps = Vec::with_capacity(n);
                let mut bind = Vec::with_capacity(n);
                for j in 0..n {
                    r.expect("step")?;
                    if r.usize()? != j {
                        return Err(r.err("step records out of order"));
                    }
                    let st = r.next()?;
                    let scheme = Scheme::parse(st).map_err(|e| r.err(e.to_string()))?;
                    let (b, h) = match r.next()? {
                        "own" => (StepBinding::Own, r.real()?),
                        "fixed" => (StepBinding::Fixed, r.real()?),
                        "pair" => {
                            let pair = r.usize()?;
                            let which = r.usize()?;
                            let frac = r.real()?;
                            (StepBinding::Pair { pair, which, frac }, 0.0)
                        }
                        t => return Err(r.err(format!("unknown binding '{t}'"))),
                    };
                    let field = r.field()?;
                    steps.push(FlowStep::new(field, h, scheme)?);
                    bind.push(b);
                }
                Layer::Flow(Block::new(steps, bind, repeat)?)
            }
            "lift" => {
                let scale = parse_hex(hs).ok_or_else(|| r.err(format!("bad lift scale '{hs}'")))?;
                r.expect("constrained")?;
                let constrained = r.flag()?;
                Layer::Lift { weight: r.weight()?, scale, constrained }
            }
            "project" => {
                r.expect("constrained")?;
                let constrained = r.flag()?;
                Layer::Project { weight: r.weight()?, constrained }
            }
            "affine" => {
                r.expect("constrained")?;
                let constrained = r.flag()?;
                let weight = r.weight()?;
                let bias = r.vec()?;
                Layer::Affine { weight, bias, constrained }
            }
            "mass_lift" => Layer::MassLift { k: din, s: dout.checked_sub(din).filter(|&s| s > 0).ok_or_else(|| r.err("bad mass_lift dims"))? },
            "mass_project" => Layer::MassProject { k: dout, s: din.checked_sub(dout).filter(|&s| s > 0).ok_or_else(|| r.err("bad mass_project dims"))? },
            t => return Err(r.err(format!("unknown layer kind '{t}'"))),
        };
        if layer.input_dim() != din || layer.output_dim() != dout {
            return Err(r.err(format!("layer {i} dims do not match its parameters")));
        }
        net.push(layer)?;
    }
    r.expect("end")?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_round_trip_edge_values() {
        for &x in &[0.0, -0.0, 1.0, -2.5, 0.1, f64::MIN_POSITIVE, 5e-324, f64::MAX, 1.0 / 3.0, -1e-310] {
            let s = fmt_hex(x);
            let y = parse_hex(&s).unwrap();
            assert_eq!(x.to_bits(), y.to_bits(), "{x} -> {s}");
        }
        assert_eq!(fmt_hex(1.0), "0x1p+0");
        assert_eq!(fmt_hex(0.5), "0x1p-1");
        assert_eq!(fmt_hex(-3.0), "-0x1.8p+1");
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_hex("0x2p+0").is_none());
        assert!(parse_hex("0x1.zp+0").is_none());
        assert!(read_model("geoflow-model v2").is_err());
    }
}
