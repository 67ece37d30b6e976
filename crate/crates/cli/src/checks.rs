use std::collections::BTreeMap;
use std::fmt;

pub type Medians = BTreeMap<String, BTreeMap<String, f64>>;

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// Informational lines never fail the run.
    pub informational: bool,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.into(),
            passed,
            detail,
            informational: false,
        }
    }

    pub fn note(name: &str, holds: bool, detail: String) -> Self {
        Check {
            name: name.into(),
            passed: true,
            detail: format!("{} ({detail})", if holds { "holds" } else { "does not hold" }),
            informational: true,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.informational {
            "NOTE"
        } else if self.passed {
            "ok"
        } else {
            "FAILED"
        };
        write!(f, "check {}: {tag} {}", self.name, self.detail)
    }
}

fn get(m: &Medians, arm: &str, split: &str) -> Option<f64> {
    m.get(arm)?.get(split).copied()
}

/// `lhs(arm) op rhs(arm)` on one split; missing arms fail the check.
pub fn compare(name: &str, m: &Medians, split: &str, lhs: &str, rhs: &str, op: Op) -> Check {
    match (get(m, lhs, split), get(m, rhs, split)) {
        (Some(a), Some(b)) => Check::new(name, op.holds(a, b), format!("{split}: {lhs} {a:.4} {op} {rhs} {b:.4}")),
        _ => Check::new(name, false, format!("{split}: missing arm {lhs} or {rhs}")),
    }
}

#[derive(Copy, Clone, Debug)]
pub enum Op {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Op {
    pub fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Op::Lt => a < b,
            Op::Le => a <= b,
            Op::Gt => a > b,
            Op::Ge => a >= b,
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::Lt => "<",
            Op::Le => "<=",
            Op::Gt => ">",
            Op::Ge => ">=",
        })
    }
}

pub const TEST_SPLITS: [&str; 3] = ["test_clean", "test_other", "test_noisy"];

pub fn table1(m: &Medians) -> Vec<Check> {
    let mut out = Vec::new();
    if m.contains_key("baseline") {
        out.push(compare("tuned_beats_baseline", m, "test_noisy", "tuned", "baseline", Op::Lt));
    }
    for s in TEST_SPLITS {
        out.push(compare("random_prompts_hurt", m, s, "random_gaussian", "tuned", Op::Gt));
    }
    out
}

pub fn table3(m: &Medians) -> Vec<Check> {
    let mut out: Vec<Check> = TEST_SPLITS
        .iter()
        .map(|s| compare("removal_not_better_than_tuned", m, s, "removed", "tuned", Op::Ge))
        .collect();
    if m.contains_key("baseline") {
        for s in TEST_SPLITS {
            let c = compare("removed_vs_baseline", m, s, "removed", "baseline", Op::Le);
            out.push(Check::note(&c.name, c.passed, c.detail));
        }
    }
    out
}

/// Keeping only content prompts (dropping the noise set) should cost no more
/// clean WER than keeping only the noise prompts.
pub fn table2(m: &Medians) -> Vec<Check> {
    vec![compare("dropping_noise_set_is_cheaper", m, "test_clean", "set1", "set2", Op::Le)]
}

pub fn table4(m: &Medians) -> Vec<Check> {
    vec![
        compare("shift_not_worse", m, "test_ood_noisy", "shifted", "vanilla", Op::Le),
        compare("vanilla_beats_baseline", m, "test_ood_noisy", "vanilla", "baseline", Op::Lt),
    ]
}

pub fn probe_order(name: &str, medians: &BTreeMap<String, f64>, hi: &str, lo: &str) -> Check {
    match (medians.get(hi), medians.get(lo)) {
        (Some(a), Some(b)) => Check::new(name, a > b, format!("{hi} {a:.4} > {lo} {b:.4}")),
        _ => Check::new(name, false, format!("missing arm {hi} or {lo}")),
    }
}
