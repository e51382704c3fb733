use num_complex::Complex64 as C;
use schottky_vir::{EvenLattice, ModuliFunction, Polynomial, SiegelTheta};

/// Parses `a`, `bi`, `a+bi`, `a-bi` (exponents allowed, `j` accepted for `i`).
pub fn complex(s: &str) -> Result<C, String> {
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if t.is_empty() {
        return Err("empty complex number".into());
    }
    let bad = || format!("cannot parse complex number '{s}'");
    let num = |u: &str| -> Result<f64, String> {
        match u {
            "" | "+" => Ok(1.0),
            "-" => Ok(-1.0),
            _ => u.parse::<f64>().map_err(|_| bad()),
        }
    };
    let Some(body) = t.strip_suffix('i').or_else(|| t.strip_suffix('j')) else {
        return Ok(C::new(t.parse::<f64>().map_err(|_| bad())?, 0.0));
    };
    let bytes = body.as_bytes();
    // last sign that is not a leading sign or an exponent sign
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    match split {
        Some(k) => Ok(C::new(num(&body[..k])?, num(&body[k..])?)),
        None => Ok(C::new(0.0, num(body)?)),
    }
}

pub fn points(s: &str) -> Result<Vec<C>, String> {
    s.split(',').map(complex).collect()
}

pub enum Supplier {
    Theta(SiegelTheta),
    Poly(Polynomial),
}

impl Supplier {
    pub fn get(&self) -> &dyn ModuliFunction {
        match self {
            Supplier::Theta(t) => t,
            Supplier::Poly(p) => p,
        }
    }

    /// Central charge implied by the supplier, if any.
    pub fn rank(&self) -> Option<usize> {
        match self {
            Supplier::Theta(t) => Some(t.lattice().rank()),
            Supplier::Poly(_) => None,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Supplier::Theta(t) => format!("siegel theta, lattice rank {}", t.lattice().rank()),
            Supplier::Poly(p) => format!("polynomial, {} terms", p.terms().len()),
        }
    }
}

/// `lattice:sqrt2`, `lattice:e8`, `lattice:file=<gram.json>` or `poly:<json table>`.
pub fn supplier(arg: &str, genus: usize) -> Result<Supplier, String> {
    if let Some(rest) = arg.strip_prefix("lattice:") {
        let lat = match rest {
            "sqrt2" => EvenLattice::sqrt2(),
            "e8" => EvenLattice::e8(),
            _ => {
                let path = rest
                    .strip_prefix("file=")
                    .ok_or_else(|| format!("unknown lattice '{rest}'"))?;
                let text = std::fs::read_to_string(path).map_err(|e| format!("{path}: {e}"))?;
                EvenLattice::from_json(&text).map_err(|e| e.to_string())?
            }
        };
        return Ok(Supplier::Theta(SiegelTheta::new(lat, genus)));
    }
    if let Some(rest) = arg.strip_prefix("poly:") {
        return Polynomial::from_json(genus, rest)
            .map(Supplier::Poly)
            .map_err(|e| e.to_string());
    }
    Err(format!("unknown supplier '{arg}'"))
}
