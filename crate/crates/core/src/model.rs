//! Core domain types and the deterministic physics chain
//! SINR -> rate -> completion time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Converts a decibel power ratio to linear: `linear = 10^(dB/10)`.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// A power-like vector that may be given in dB or linear units on the wire.
/// Bare arrays are interpreted as linear.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PowerField {
    Bare(Vec<f64>),
    Tagged(TaggedPower),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TaggedPower {
    #[serde(rename = "dB")]
    Db(Vec<f64>),
    #[serde(rename = "linear")]
    Linear(Vec<f64>),
}

impl PowerField {
    pub fn to_linear(&self) -> Vec<f64> {
        match self {
            PowerField::Bare(v) => v.clone(),
            PowerField::Tagged(TaggedPower::Linear(v)) => v.clone(),
            PowerField::Tagged(TaggedPower::Db(v)) => v.iter().map(|&x| db_to_linear(x)).collect(),
        }
    }
}

/// An interference-limited wireless packet network instance.
///
/// All quantities are stored in linear units; dB fields are converted at
/// parse time.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkInstance {
    users: usize,
    gains: Vec<Vec<f64>>,
    noise: Vec<f64>,
    pmax: Vec<f64>,
    packet_bits: Vec<f64>,
    tmax: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NetworkInstanceWire {
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "G")]
    g: Vec<Vec<f64>>,
    #[serde(rename = "N_dB_or_linear")]
    n: PowerField,
    #[serde(rename = "Pmax_dB_or_linear")]
    pmax: PowerField,
    #[serde(rename = "L")]
    l: Vec<f64>,
    #[serde(rename = "Tmax", skip_serializing_if = "Option::is_none")]
    tmax: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    units: Option<String>,
}

impl NetworkInstance {
    pub fn new(
        gains: Vec<Vec<f64>>,
        noise: Vec<f64>,
        pmax: Vec<f64>,
        packet_bits: Vec<f64>,
        tmax: Option<Vec<f64>>,
    ) -> Result<Self> {
        let m = gains.len();
        if m == 0 {
            return Err(Error::invalid("instance must have at least one user"));
        }
        for (i, row) in gains.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Dimension {
                    context: "gain matrix row",
                    expected: m,
                    got: row.len(),
                });
            }
            for (j, &g) in row.iter().enumerate() {
                if !(g >= 0.0) {
                    return Err(Error::invalid(format!("G[{i}][{j}] = {g} must be >= 0")));
                }
            }
            if !(gains[i][i] > 0.0) {
                return Err(Error::invalid(format!("diagonal gain G[{i}][{i}] must be > 0")));
            }
        }
        check_len("N", &noise, m)?;
        check_len("Pmax", &pmax, m)?;
        check_len("L", &packet_bits, m)?;
        check_positive("N", &noise)?;
        check_positive("Pmax", &pmax)?;
        check_positive("L", &packet_bits)?;
        if let Some(t) = &tmax {
            check_len("Tmax", t, m)?;
            check_positive("Tmax", t)?;
            // The cap must be achievable even at zero interference.
            for i in 0..m {
                let t_best = packet_bits[i] / (1.0 + gains[i][i] * pmax[i] / noise[i]).log2();
                if t[i] <= t_best {
                    return Err(Error::invalid(format!(
                        "Tmax[{i}] = {} unachievable: interference-free lower bound is {t_best}",
                        t[i]
                    )));
                }
            }
        }
        Ok(Self {
            users: m,
            gains,
            noise,
            pmax,
            packet_bits,
            tmax,
        })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn gains(&self) -> &[Vec<f64>] {
        &self.gains
    }

    pub fn gain(&self, i: usize, j: usize) -> f64 {
        self.gains[i][j]
    }

    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn pmax(&self) -> &[f64] {
        &self.pmax
    }

    pub fn packet_bits(&self) -> &[f64] {
        &self.packet_bits
    }

    pub fn tmax(&self) -> Option<&[f64]> {
        self.tmax.as_deref()
    }

    /// The interference-free completion time of user `i` at full power.
    pub fn single_user_time(&self, i: usize) -> f64 {
        self.packet_bits[i] / (1.0 + self.gains[i][i] * self.pmax[i] / self.noise[i]).log2()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let wire: NetworkInstanceWire = serde_json::from_str(s)?;
        let inst = Self::new(wire.g, wire.n.to_linear(), wire.pmax.to_linear(), wire.l, wire.tmax)?;
        if inst.users != wire.m {
            return Err(Error::Dimension {
                context: "declared user count M",
                expected: inst.users,
                got: wire.m,
            });
        }
        Ok(inst)
    }

    pub fn to_json(&self) -> String {
        let wire = NetworkInstanceWire {
            m: self.users,
            g: self.gains.clone(),
            n: PowerField::Tagged(TaggedPower::Linear(self.noise.clone())),
            pmax: PowerField::Tagged(TaggedPower::Linear(self.pmax.clone())),
            l: self.packet_bits.clone(),
            tmax: self.tmax.clone(),
            units: Some("linear".to_string()),
        };
        serde_json::to_string_pretty(&wire).expect("instance serialization cannot fail")
    }

    /// A short content fingerprint, used to tag region traces.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.to_json().as_bytes());
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn check_len(name: &'static str, v: &[f64], m: usize) -> Result<()> {
    if v.len() != m {
        return Err(Error::Dimension {
            context: name,
            expected: m,
            got: v.len(),
        });
    }
    Ok(())
}

fn check_positive(name: &str, v: &[f64]) -> Result<()> {
    for (i, &x) in v.iter().enumerate() {
        if !(x > 0.0) {
            return Err(Error::invalid(format!("{name}[{i}] = {x} must be > 0")));
        }
    }
    Ok(())
}

/// A transmit-power vector in linear units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub p: Vec<f64>,
}

impl PowerAllocation {
    pub fn new(p: Vec<f64>) -> Self {
        Self { p }
    }

    pub fn validate(&self, inst: &NetworkInstance) -> Result<()> {
        check_len("P", &self.p, inst.users())?;
        for i in 0..self.p.len() {
            if !(self.p[i] >= 0.0) || self.p[i] > inst.pmax()[i] * (1.0 + 1e-12) {
                return Err(Error::invalid(format!(
                    "P[{i}] = {} outside [0, Pmax = {}]",
                    self.p[i],
                    inst.pmax()[i]
                )));
            }
        }
        Ok(())
    }
}

/// Per-user SINR, rate, and completion time at a fixed power allocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkState {
    pub sinr: Vec<f64>,
    pub rate: Vec<f64>,
    pub time: Vec<f64>,
}

impl LinkState {
    pub fn evaluate(inst: &NetworkInstance, p: &PowerAllocation) -> Result<Self> {
        let s = sinr(inst, p)?;
        let r = rate(&s)?;
        let t = completion_time(inst.packet_bits(), &r);
        Ok(Self { sinr: s, rate: r, time: t })
    }
}

/// `S_i = G_ii P_i / (N_i + sum_{j != i} G_ij P_j)`, interference treated
/// as noise.
pub fn sinr(inst: &NetworkInstance, p: &PowerAllocation) -> Result<Vec<f64>> {
    let m = inst.users();
    check_len("P", &p.p, m)?;
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let mut denom = inst.noise()[i];
        for j in 0..m {
            if j != i {
                denom += inst.gain(i, j) * p.p[j];
            }
        }
        out.push(inst.gain(i, i) * p.p[i] / denom);
    }
    Ok(out)
}

/// `R_i = log2(1 + S_i)`.
pub fn rate(s: &[f64]) -> Result<Vec<f64>> {
    for (i, &x) in s.iter().enumerate() {
        if x < 0.0 {
            return Err(Error::invalid(format!("SINR[{i}] = {x} must be >= 0")));
        }
    }
    Ok(s.iter().map(|&x| (1.0 + x).log2()).collect())
}

/// `T_i = L_i / R_i`, with an explicit `+inf` sentinel at zero rate.
pub fn completion_time(l: &[f64], r: &[f64]) -> Vec<f64> {
    l.iter()
        .zip(r.iter())
        .map(|(&li, &ri)| if ri > 0.0 { li / ri } else { f64::INFINITY })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn reference_instance() -> NetworkInstance {
        NetworkInstance::new(
            vec![vec![0.42, 0.89], vec![0.63, 0.15]],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![10.0, 10.0],
            None,
        )
        .unwrap()
    }

    #[test]
    fn sinr_single_user_no_interference() {
        let inst = NetworkInstance::new(vec![vec![1.0]], vec![1.0], vec![1.0], vec![10.0], None).unwrap();
        let s = sinr(&inst, &PowerAllocation::new(vec![1.0])).unwrap();
        assert_relative_eq!(s[0], 1.0);
    }

    #[test]
    fn sinr_reference_instance_full_power() {
        let inst = reference_instance();
        let s = sinr(&inst, &PowerAllocation::new(vec![1.0, 1.0])).unwrap();
        assert_relative_eq!(s[0], 0.42 / 1.89, max_relative = 1e-12);
        assert_relative_eq!(s[1], 0.15 / 1.63, max_relative = 1e-12);
        assert_relative_eq!(s[0], 0.22222, max_relative = 1e-4);
        assert_relative_eq!(s[1], 0.09202, max_relative = 1e-4);
    }

    #[test]
    fn sinr_zero_power() {
        let inst = reference_instance();
        let s = sinr(&inst, &PowerAllocation::new(vec![0.0, 0.0])).unwrap();
        assert_eq!(s, vec![0.0, 0.0]);
    }

    #[test]
    fn sinr_dimension_mismatch() {
        let inst = reference_instance();
        assert!(sinr(&inst, &PowerAllocation::new(vec![1.0])).is_err());
    }

    #[test]
    fn rate_values() {
        assert_relative_eq!(rate(&[1.0]).unwrap()[0], 1.0);
        assert_relative_eq!(rate(&[0.0]).unwrap()[0], 0.0);
        assert_relative_eq!(rate(&[0.22222]).unwrap()[0], 0.28950, max_relative = 1e-4);
        assert!(rate(&[-0.1]).is_err());
    }

    #[test]
    fn completion_time_values() {
        assert_relative_eq!(completion_time(&[10.0], &[1.0])[0], 10.0);
        assert_eq!(completion_time(&[10.0], &[0.0])[0], f64::INFINITY);
    }

    #[test]
    fn physics_chain_reference_instance() {
        let inst = reference_instance();
        let ls = LinkState::evaluate(&inst, &PowerAllocation::new(vec![1.0, 1.0])).unwrap();
        assert_relative_eq!(ls.time[0], 34.54, max_relative = 1e-3);
        assert_relative_eq!(ls.time[1], 78.72, max_relative = 1e-3);
    }

    #[test]
    fn tmax_unachievable_rejected() {
        // Single-user interference-free bound: 10 / log2(2) = 10.
        let res = NetworkInstance::new(vec![vec![1.0]], vec![1.0], vec![1.0], vec![10.0], Some(vec![9.0]));
        assert!(res.is_err());
        let ok = NetworkInstance::new(vec![vec![1.0]], vec![1.0], vec![1.0], vec![10.0], Some(vec![11.0]));
        assert!(ok.is_ok());
    }

    #[test]
    fn json_round_trip_and_db_parsing() {
        let json = r#"{
            "M": 2,
            "G": [[0.42, 0.89], [0.63, 0.15]],
            "N_dB_or_linear": {"dB": [0.0, 0.0]},
            "Pmax_dB_or_linear": {"dB": [0.0, 0.0]},
            "L": [10.0, 10.0]
        }"#;
        let inst = NetworkInstance::from_json(json).unwrap();
        assert_eq!(inst.noise(), &[1.0, 1.0]);
        assert_eq!(inst.pmax(), &[1.0, 1.0]);
        let back = NetworkInstance::from_json(&inst.to_json()).unwrap();
        assert_eq!(inst, back);
    }

    #[test]
    fn bare_arrays_parse_as_linear() {
        let json = r#"{"M":1,"G":[[1.0]],"N_dB_or_linear":[1.0],"Pmax_dB_or_linear":[2.0],"L":[10.0]}"#;
        let inst = NetworkInstance::from_json(json).unwrap();
        assert_eq!(inst.pmax(), &[2.0]);
    }
}
