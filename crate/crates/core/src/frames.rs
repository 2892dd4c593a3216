//! Three-phase vectors and the rotating-frame transformations used by the
//! dqz model.
//!
//! Δ quantities live in a positive-sequence frame at the grid frequency,
//! Σ quantities in a negative-sequence frame at twice the grid frequency,
//! and the zero sequence of the Δ capacitor voltage in a virtual frame at
//! three times the grid frequency.
//!
//! All Park transformations are amplitude invariant:
//!
//! ```text
//! d =  2/3 * Σ x_n cos(θ - 2πn/3)
//! q =  2/3 * s Σ x_n sin(θ - 2πn/3)      s = sign(k)
//! z =  1/3 * Σ x_n
//! ```
//!
//! with `θ = k ω t` supplied by the caller. For `k = +1` this is the usual
//! frame with q on the `+sin` projection. For `k = -2` the q axis is
//! mirrored so that both frames satisfy `P dP⁻¹/dt = |k| Jω`; that is the
//! orientation under which the dqz equations of [`crate::ssti`] hold.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, Matrix2, Matrix3, Matrix4};
use thiserror::Error;

const TWO_PI_3: f64 = 2.0 * PI / 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("unsupported harmonic multiple {0} (expected +1 or -2)")]
    UnsupportedMultiple(i32),
    #[error("frame mismatch: {0:?} vs {1:?}")]
    Mismatch(Frame, Frame),
}

/// Samples of a three-phase quantity in the stationary frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Abc {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Abc {
    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        Abc { a, b, c }
    }

    pub const fn splat(v: f64) -> Self {
        Abc { a: v, b: v, c: v }
    }

    pub const fn zero() -> Self {
        Abc::splat(0.0)
    }

    pub fn sum(&self) -> f64 {
        self.a + self.b + self.c
    }

    pub fn mean(&self) -> f64 {
        self.sum() / 3.0
    }

    pub fn scale(self, k: f64) -> Self {
        Abc::new(self.a * k, self.b * k, self.c * k)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Abc::new(v[0], v[1], v[2])
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Abc::new(f(self.a), f(self.b), f(self.c))
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite()
    }
}

impl Add for Abc {
    type Output = Abc;
    fn add(self, o: Abc) -> Abc {
        Abc::new(self.a + o.a, self.b + o.b, self.c + o.c)
    }
}

impl Sub for Abc {
    type Output = Abc;
    fn sub(self, o: Abc) -> Abc {
        Abc::new(self.a - o.a, self.b - o.b, self.c - o.c)
    }
}

impl Neg for Abc {
    type Output = Abc;
    fn neg(self) -> Abc {
        Abc::new(-self.a, -self.b, -self.c)
    }
}

/// Element-wise (Hadamard) product.
impl Mul for Abc {
    type Output = Abc;
    fn mul(self, o: Abc) -> Abc {
        ewise(self, o)
    }
}

impl Mul<f64> for Abc {
    type Output = Abc;
    fn mul(self, k: f64) -> Abc {
        self.scale(k)
    }
}

/// Element-wise product of two phase vectors.
pub fn ewise(a: Abc, b: Abc) -> Abc {
    Abc::new(a.a * b.a, a.b * b.b, a.c * b.c)
}

/// Rotating reference frame a dqz vector is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Frame {
    /// Positive sequence at the grid frequency (`k = +1`).
    Fundamental,
    /// Negative sequence at twice the grid frequency (`k = -2`).
    NegativeDouble,
}

impl Frame {
    pub fn from_multiple(k: i32) -> Result<Self, FrameError> {
        match k {
            1 => Ok(Frame::Fundamental),
            -2 => Ok(Frame::NegativeDouble),
            other => Err(FrameError::UnsupportedMultiple(other)),
        }
    }

    pub fn multiple(self) -> i32 {
        match self {
            Frame::Fundamental => 1,
            Frame::NegativeDouble => -2,
        }
    }

    /// Frame angle `k ω t`.
    pub fn angle(self, omega: f64, t: f64) -> f64 {
        self.multiple() as f64 * omega * t
    }

    fn q_sign(self) -> f64 {
        match self {
            Frame::Fundamental => 1.0,
            Frame::NegativeDouble => -1.0,
        }
    }
}

/// dqz components tagged with the frame they belong to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dqz {
    pub d: f64,
    pub q: f64,
    pub z: f64,
    frame: Frame,
}

impl Dqz {
    pub fn new(frame: Frame, d: f64, q: f64, z: f64) -> Self {
        Dqz { d, q, z, frame }
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.d, self.q, self.z]
    }

    pub fn scale(self, k: f64) -> Self {
        Dqz::new(self.frame, self.d * k, self.q * k, self.z * k)
    }

    pub fn try_add(self, o: Dqz) -> Result<Dqz, FrameError> {
        if self.frame != o.frame {
            return Err(FrameError::Mismatch(self.frame, o.frame));
        }
        Ok(Dqz::new(self.frame, self.d + o.d, self.q + o.q, self.z + o.z))
    }

    pub fn try_sub(self, o: Dqz) -> Result<Dqz, FrameError> {
        self.try_add(o.scale(-1.0))
    }
}

/// Zero-sequence quantity referred to the virtual 3ω frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Zdq {
    pub zd: f64,
    pub zq: f64,
}

impl Zdq {
    pub fn new(zd: f64, zq: f64) -> Self {
        Zdq { zd, zq }
    }
}

fn phase_angles(theta: f64) -> [f64; 3] {
    [theta, theta - TWO_PI_3, theta + TWO_PI_3]
}

/// Park transformation of `x` into the frame `frame` at angle `theta = kωt`.
pub fn to_dqz(x: Abc, frame: Frame, theta: f64) -> Dqz {
    let s = frame.q_sign();
    let xs = x.to_array();
    let (mut d, mut q) = (0.0, 0.0);
    for (xn, ang) in xs.iter().zip(phase_angles(theta)) {
        let (sn, cn) = ang.sin_cos();
        d += xn * cn;
        q += xn * sn;
    }
    Dqz::new(frame, 2.0 / 3.0 * d, s * 2.0 / 3.0 * q, x.sum() / 3.0)
}

/// Inverse Park transformation. The frame is taken from the vector's tag.
pub fn to_abc(v: Dqz, theta: f64) -> Abc {
    let s = v.frame.q_sign();
    let [a, b, c] = phase_angles(theta).map(|ang| {
        let (sn, cn) = ang.sin_cos();
        v.d * cn + s * v.q * sn + v.z
    });
    Abc::new(a, b, c)
}

/// Park matrix of a frame at angle `theta`.
pub fn park_matrix(frame: Frame, theta: f64) -> Matrix3<f64> {
    let s = frame.q_sign();
    let ph = phase_angles(theta);
    Matrix3::from_fn(|r, c| match r {
        0 => 2.0 / 3.0 * ph[c].cos(),
        1 => s * 2.0 / 3.0 * ph[c].sin(),
        _ => 1.0 / 3.0,
    })
}

/// Inverse Park matrix of a frame at angle `theta`.
pub fn inverse_park_matrix(frame: Frame, theta: f64) -> Matrix3<f64> {
    let s = frame.q_sign();
    let ph = phase_angles(theta);
    Matrix3::from_fn(|r, c| match c {
        0 => ph[r].cos(),
        1 => s * ph[r].sin(),
        _ => 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingKind {
    W,
    W2,
    W3,
    G,
}

/// `Jω = [[0, ω, 0], [-ω, 0, 0], [0, 0, 0]]`.
pub fn j_omega(omega: f64) -> Matrix3<f64> {
    Matrix3::new(0.0, omega, 0.0, -omega, 0.0, 0.0, 0.0, 0.0, 0.0)
}

/// `J2ω = 2 Jω`.
pub fn j_2omega(omega: f64) -> Matrix3<f64> {
    j_omega(omega) * 2.0
}

/// `J3ω = [[0, -3ω], [3ω, 0]]`.
pub fn j_3omega(omega: f64) -> Matrix2<f64> {
    Matrix2::new(0.0, -3.0 * omega, 3.0 * omega, 0.0)
}

/// Block diagonal of the dq part of `Jω` and `J3ω`.
pub fn j_g(omega: f64) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<2, 2>(0, 0).copy_from(&j_omega(omega).fixed_view::<2, 2>(0, 0));
    m.fixed_view_mut::<2, 2>(2, 2).copy_from(&j_3omega(omega));
    m
}

pub fn coupling_matrix(kind: CouplingKind, omega: f64) -> DMatrix<f64> {
    match kind {
        CouplingKind::W => DMatrix::from_column_slice(3, 3, j_omega(omega).as_slice()),
        CouplingKind::W2 => DMatrix::from_column_slice(3, 3, j_2omega(omega).as_slice()),
        CouplingKind::W3 => DMatrix::from_column_slice(2, 2, j_3omega(omega).as_slice()),
        CouplingKind::G => DMatrix::from_column_slice(4, 4, j_g(omega).as_slice()),
    }
}

/// `T3ω(θ3) = [[cos θ3, sin θ3], [sin θ3, -cos θ3]]`, symmetric and involutory.
pub fn t3w(theta3: f64) -> Matrix2<f64> {
    let (s, c) = theta3.sin_cos();
    Matrix2::new(c, s, s, -c)
}
