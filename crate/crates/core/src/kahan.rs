use num_complex::Complex64;

/// Compensated complex accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Kahan {
    sum: Complex64,
    comp: Complex64,
}

impl Kahan {
    #[inline]
    pub(crate) fn add(&mut self, x: Complex64) {
        let (re, cre) = step(self.sum.re, self.comp.re, x.re);
        let (im, cim) = step(self.sum.im, self.comp.im, x.im);
        self.sum = Complex64::new(re, im);
        self.comp = Complex64::new(cre, cim);
    }
}

// Neumaier's variant: robust when |x| exceeds the running sum.
#[inline]
fn step(sum: f64, comp: f64, x: f64) -> (f64, f64) {
    let t = sum + x;
    let c = if sum.abs() >= x.abs() {
        comp + ((sum - t) + x)
    } else {
        comp + ((x - t) + sum)
    };
    (t, c)
}

impl Kahan {
    #[inline]
    pub(crate) fn total(&self) -> Complex64 {
        self.sum + self.comp
    }
}
