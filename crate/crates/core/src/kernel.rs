//! Kernels on `[-1/2, 1/2]` and the influence weights built from them.

use core::fmt;
use core::str::FromStr;

use crate::Error;

/// A symmetric probability density supported on `[-1/2, 1/2]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Kernel {
    Uniform,
    /// `K(z) = (3/2)(1 - 4z^2)`, the kernel minimising `sigma_K * R_K`.
    #[default]
    Epanechnikov,
}

/// Closed-form constants of a kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelConstants {
    /// `K(0)`
    pub k0: f64,
    /// `R_K`, the integral of `K^2`.
    pub r_k: f64,
    /// Standard deviation of the kernel density.
    pub sigma_k: f64,
    /// Second moment.
    pub k2: f64,
    /// Fourth moment.
    pub k4: f64,
}

impl KernelConstants {
    /// `R_K / K(0)`, the large-sample limit of `t0 / s0`.
    pub fn weight_ratio(&self) -> f64 {
        self.r_k / self.k0
    }
}

const UNIFORM: KernelConstants = KernelConstants {
    k0: 1.0,
    r_k: 1.0,
    sigma_k: 0.288_675_134_594_812_9, // sqrt(1/12)
    k2: 1.0 / 12.0,
    k4: 1.0 / 80.0,
};

const EPANECHNIKOV: KernelConstants = KernelConstants {
    k0: 1.5,
    r_k: 1.2,
    sigma_k: 0.223_606_797_749_979, // sqrt(1/20)
    k2: 1.0 / 20.0,
    k4: 3.0 / 560.0,
};

impl Kernel {
    /// The density `K(z)`.
    pub fn density(self, z: f64) -> f64 {
        self.constants().k0 * self.scaled(z)
    }

    /// The rescaled kernel `K(z) / K(0)`, equal to one at the origin.
    pub fn scaled(self, z: f64) -> f64 {
        if !(z.abs() <= 0.5) {
            return 0.0;
        }
        match self {
            Kernel::Uniform => 1.0,
            Kernel::Epanechnikov => {
                let u = 2.0 * z;
                (1.0 - u * u).max(0.0)
            }
        }
    }

    pub fn constants(self) -> KernelConstants {
        match self {
            Kernel::Uniform => UNIFORM,
            Kernel::Epanechnikov => EPANECHNIKOV,
        }
    }

    /// Influence of the pair at `xi` on estimation at `x` for window width `h`.
    pub fn weight(self, h: f64, xi: f64, x: f64) -> f64 {
        debug_assert!(h > 0.0);
        self.scaled((xi - x) / h)
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Uniform => "uniform",
            Kernel::Epanechnikov => "epanechnikov",
        }
    }
}

/// `K̄((xi - x) / h)`; zero outside the window `|xi - x| <= h/2`.
pub fn influence_weight(kernel: Kernel, h: f64, xi: f64, x: f64) -> f64 {
    kernel.weight(h, xi, x)
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(Kernel::Uniform),
            "epanechnikov" => Ok(Kernel::Epanechnikov),
            _ => Err(Error::invalid("kernel", "expected `uniform` or `epanechnikov`")),
        }
    }
}
