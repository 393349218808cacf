use ndarray::{Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{concat_columns, split_columns, Mlp, MlpPass, MlpSpec, Parameterized};
use super::sgd::Steppable;
use crate::error::{Error, Result};

/// Mid-layer features and output logits of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub mid: Array2<f64>,
    pub logits: Array2<f64>,
}

/// A beam classifier with a mid-feature tap and hand-written backprop.
pub trait BeamNet: Clone + Parameterized + Steppable {
    type Pass;

    fn input_dim(&self) -> usize;
    fn mid_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn forward_pass(&self, x: ArrayView2<f64>) -> Result<(Self::Pass, Features)>;
    /// Parameter gradients for `d_logits` at the output plus `d_mid` injected
    /// at the mid feature.
    fn backward(
        &self,
        pass: &Self::Pass,
        d_logits: &Array2<f64>,
        d_mid: Option<&Array2<f64>>,
    ) -> Self;
    fn zeros_like(&self) -> Self;

    fn forward(&self, x: ArrayView2<f64>) -> Result<Features> {
        Ok(self.forward_pass(x)?.1)
    }
}

impl Steppable for Mlp {
    fn is_finite(&self) -> bool {
        Mlp::is_finite(self)
    }

    fn axpy(&mut self, a: f64, g: &Self) {
        Mlp::axpy(self, a, g)
    }
}

impl BeamNet for Mlp {
    type Pass = MlpPass;

    fn input_dim(&self) -> usize {
        Mlp::input_dim(self)
    }

    fn mid_dim(&self) -> usize {
        Mlp::mid_dim(self)
    }

    fn output_dim(&self) -> usize {
        Mlp::output_dim(self)
    }

    fn forward_pass(&self, x: ArrayView2<f64>) -> Result<(MlpPass, Features)> {
        let pass = Mlp::forward(self, x)?;
        let features = Features {
            mid: self.mid(&pass).clone(),
            logits: pass.output().clone(),
        };
        Ok((pass, features))
    }

    fn backward(
        &self,
        pass: &MlpPass,
        d_logits: &Array2<f64>,
        d_mid: Option<&Array2<f64>>,
    ) -> Self {
        Mlp::backward(self, pass, d_logits, d_mid).0
    }

    fn zeros_like(&self) -> Self {
        Mlp::zeros_like(self)
    }
}

/// Layer widths of the multimodal teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherArch {
    /// Hidden widths of the radar encoder.
    pub radar: Vec<usize>,
    /// Hidden widths of the BEV encoder.
    pub bev: Vec<usize>,
    /// Hidden widths of the GPS encoder.
    pub gps: Vec<usize>,
    /// Hidden widths of the fusion trunk (the output layer is added).
    pub fusion: Vec<usize>,
    /// Fusion layer whose output is the mid feature.
    pub mid_layer: usize,
}

impl Default for TeacherArch {
    fn default() -> Self {
        TeacherArch {
            radar: vec![256],
            bev: vec![256],
            gps: vec![128],
            fusion: vec![256, 128],
            mid_layer: 1,
        }
    }
}

/// Layer widths of the radar-only student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentArch {
    /// Hidden widths (the output layer is added).
    pub hidden: Vec<usize>,
    pub mid_layer: usize,
}

impl Default for StudentArch {
    fn default() -> Self {
        StudentArch {
            hidden: vec![128; 5],
            mid_layer: 2,
        }
    }
}

fn encoder_spec(input: usize, hidden: &[usize]) -> MlpSpec {
    let mut widths = vec![input];
    widths.extend(hidden);
    MlpSpec {
        mid_layer: hidden.len().saturating_sub(1),
        widths,
        relu_output: true,
    }
}

impl StudentArch {
    pub fn spec(&self, input: usize, beams: usize) -> MlpSpec {
        let mut widths = vec![input];
        widths.extend(&self.hidden);
        widths.push(beams);
        MlpSpec {
            widths,
            mid_layer: self.mid_layer,
            relu_output: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mid_layer >= self.hidden.len() {
            return Err(Error::Config(
                "student: mid_layer must index a hidden layer".into(),
            ));
        }
        self.spec(1, 1).validate()
    }
}

impl TeacherArch {
    /// `segments` are the radar, BEV and GPS input widths.
    pub fn spec(&self, segments: [usize; 3], beams: usize) -> TeacherSpec {
        let radar = encoder_spec(segments[0], &self.radar);
        let bev = encoder_spec(segments[1], &self.bev);
        let gps = encoder_spec(segments[2], &self.gps);
        let fused =
            radar.widths.last().unwrap() + bev.widths.last().unwrap() + gps.widths.last().unwrap();
        let mut widths = vec![fused];
        widths.extend(&self.fusion);
        widths.push(beams);
        TeacherSpec {
            radar,
            bev,
            gps,
            fusion: MlpSpec {
                widths,
                mid_layer: self.mid_layer,
                relu_output: false,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.radar.is_empty() || self.bev.is_empty() || self.gps.is_empty() {
            return Err(Error::Config(
                "teacher: every encoder needs a hidden layer".into(),
            ));
        }
        if self.mid_layer >= self.fusion.len() {
            return Err(Error::Config(
                "teacher: mid_layer must index a fusion hidden layer".into(),
            ));
        }
        self.spec([1, 1, 1], 1).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSpec {
    pub radar: MlpSpec,
    pub bev: MlpSpec,
    pub gps: MlpSpec,
    pub fusion: MlpSpec,
}

impl TeacherSpec {
    pub fn validate(&self) -> Result<()> {
        for s in [&self.radar, &self.bev, &self.gps, &self.fusion] {
            s.validate()?;
        }
        let fused: usize = [&self.radar, &self.bev, &self.gps]
            .iter()
            .map(|s| *s.widths.last().unwrap())
            .sum();
        if fused != self.fusion.widths[0] {
            return Err(Error::Config(format!(
                "teacher: fusion input {} does not match encoder outputs {fused}",
                self.fusion.widths[0]
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        [&self.radar, &self.bev, &self.gps, &self.fusion]
            .iter()
            .map(|s| s.param_count())
            .sum()
    }
}

/// Per-modality encoders feeding a fusion MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherNet {
    pub radar: Mlp,
    pub bev: Mlp,
    pub gps: Mlp,
    pub fusion: Mlp,
}

#[derive(Debug, Clone)]
pub struct TeacherPass {
    encoders: [MlpPass; 3],
    fusion: MlpPass,
}

impl TeacherNet {
    pub fn new(spec: &TeacherSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        Ok(TeacherNet {
            radar: Mlp::new(&spec.radar, rng)?,
            bev: Mlp::new(&spec.bev, rng)?,
            gps: Mlp::new(&spec.gps, rng)?,
            fusion: Mlp::new(&spec.fusion, rng)?,
        })
    }

    pub fn spec(&self) -> TeacherSpec {
        TeacherSpec {
            radar: self.radar.spec(),
            bev: self.bev.spec(),
            gps: self.gps.spec(),
            fusion: self.fusion.spec(),
        }
    }

    fn encoders(&self) -> [&Mlp; 3] {
        [&self.radar, &self.bev, &self.gps]
    }

    fn segments(&self) -> [usize; 3] {
        self.encoders().map(|e| e.input_dim())
    }
}

impl Parameterized for TeacherNet {
    fn param_count(&self) -> usize {
        self.encoders()
            .iter()
            .map(|e| e.param_count())
            .sum::<usize>()
            + self.fusion.param_count()
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        for e in self.encoders() {
            e.write_params(out);
        }
        self.fusion.write_params(out);
    }

    fn read_params(&mut self, src: &[f64]) -> usize {
        let mut used = self.radar.read_params(src);
        used += self.bev.read_params(&src[used..]);
        used += self.gps.read_params(&src[used..]);
        used + self.fusion.read_params(&src[used..])
    }
}

impl Steppable for TeacherNet {
    fn is_finite(&self) -> bool {
        self.encoders().iter().all(|e| e.is_finite()) && self.fusion.is_finite()
    }

    fn axpy(&mut self, a: f64, g: &Self) {
        self.radar.axpy(a, &g.radar);
        self.bev.axpy(a, &g.bev);
        self.gps.axpy(a, &g.gps);
        self.fusion.axpy(a, &g.fusion);
    }
}

impl BeamNet for TeacherNet {
    type Pass = TeacherPass;

    fn input_dim(&self) -> usize {
        self.segments().iter().sum()
    }

    fn mid_dim(&self) -> usize {
        self.fusion.mid_dim()
    }

    fn output_dim(&self) -> usize {
        self.fusion.output_dim()
    }

    fn forward_pass(&self, x: ArrayView2<f64>) -> Result<(TeacherPass, Features)> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(
                format!("{} input columns", self.input_dim()),
                x.ncols(),
            ));
        }
        let blocks = split_columns(x, &self.segments());
        let e0 = self.radar.forward(blocks[0].view())?;
        let e1 = self.bev.forward(blocks[1].view())?;
        let e2 = self.gps.forward(blocks[2].view())?;
        let fused = concat_columns(&[e0.output(), e1.output(), e2.output()]);
        let fusion = self.fusion.forward(fused.view())?;
        let features = Features {
            mid: self.fusion.mid(&fusion).clone(),
            logits: fusion.output().clone(),
        };
        Ok((
            TeacherPass {
                encoders: [e0, e1, e2],
                fusion,
            },
            features,
        ))
    }

    fn backward(
        &self,
        pass: &TeacherPass,
        d_logits: &Array2<f64>,
        d_mid: Option<&Array2<f64>>,
    ) -> Self {
        let (fusion, d_fused) = self.fusion.backward(&pass.fusion, d_logits, d_mid);
        let widths = self.encoders().map(|e| e.output_dim());
        let d_blocks = split_columns(d_fused.view(), &widths);
        let enc = |m: &Mlp, p: &MlpPass, d: &Array2<f64>| m.backward(p, d, None).0;
        TeacherNet {
            radar: enc(&self.radar, &pass.encoders[0], &d_blocks[0]),
            bev: enc(&self.bev, &pass.encoders[1], &d_blocks[1]),
            gps: enc(&self.gps, &pass.encoders[2], &d_blocks[2]),
            fusion,
        }
    }

    fn zeros_like(&self) -> Self {
        TeacherNet {
            radar: self.radar.zeros_like(),
            bev: self.bev.zeros_like(),
            gps: self.gps.zeros_like(),
            fusion: self.fusion.zeros_like(),
        }
    }
}

/// Rounds every parameter to the nearest `f32`, the checkpoint precision.
pub fn round_to_f32<M: Parameterized>(model: &mut M) {
    let p: Vec<f64> = model.params().iter().map(|&v| v as f32 as f64).collect();
    model.read_params(&p);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn default_student_is_small_fraction_of_teacher() {
        // radar window 5×32×5, BEV 5×16×48, GPS 5×40×5, 152 beams
        let segments = [800, 3840, 1000];
        let teacher = TeacherArch::default().spec(segments, 152);
        let student = StudentArch::default().spec(800, 152);
        let t = teacher.param_count();
        let s = student.param_count();
        let fc = |a: usize, b: usize| a * b + b;
        assert_eq!(
            t,
            fc(800, 256)
                + fc(3840, 256)
                + fc(1000, 128)
                + fc(640, 256)
                + fc(256, 128)
                + fc(128, 152)
        );
        assert_eq!(s, fc(800, 128) + 4 * fc(128, 128) + fc(128, 152));
        assert_eq!(student.widths.len() - 1, 6);
        assert!((s as f64) / (t as f64) <= 0.15);
    }

    #[test]
    fn teacher_counts_match_instantiated_params() {
        let spec = TeacherArch::default().spec([20, 30, 10], 7);
        let net = TeacherNet::new(&spec, &mut seed::rng(2, &[])).unwrap();
        assert_eq!(net.param_count(), spec.param_count());
        assert_eq!(net.params().len(), spec.param_count());
        assert_eq!(net.spec(), spec);
        assert_eq!(net.input_dim(), 60);
        assert_eq!(net.output_dim(), 7);
        assert_eq!(net.mid_dim(), 128);
    }

    #[test]
    fn teacher_forward_is_deterministic() {
        let spec = TeacherArch {
            radar: vec![6],
            bev: vec![5],
            gps: vec![4],
            fusion: vec![8, 6],
            mid_layer: 0,
        }
        .spec([4, 3, 2], 5);
        let net = TeacherNet::new(&spec, &mut seed::rng(3, &[])).unwrap();
        let x = Array2::from_shape_fn((3, 9), |(i, j)| ((i * 9 + j) as f64).cos());
        let a = net.forward(x.view()).unwrap();
        let b = net.forward(x.view()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mid.dim(), (3, 8));
        assert_eq!(a.logits.dim(), (3, 5));
    }
}
