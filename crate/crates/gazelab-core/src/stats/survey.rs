//! Survey-response tables: ingestion, scoring, detection coding,
//! attribute prevalence, and the full analysis report combining the
//! nonparametric tests. Operates on CSV response tables; bundled
//! synthetic fixtures stand in for human data.

use super::{
    code_detection, kruskal_wallis, mann_whitney_u, uncanniness_score, wilcoxon_signed_rank,
    PMethod, StatsError,
};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;

/// Stimulus generation condition of one response.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SurveyCondition {
    Real,
    Dfl,
    DflEm,
    DflGaze,
}

impl SurveyCondition {
    pub const ALL: [SurveyCondition; 4] = [
        SurveyCondition::Real,
        SurveyCondition::Dfl,
        SurveyCondition::DflEm,
        SurveyCondition::DflGaze,
    ];

    pub fn token(self) -> &'static str {
        match self {
            SurveyCondition::Real => "real",
            SurveyCondition::Dfl => "dfl",
            SurveyCondition::DflEm => "dfl_em",
            SurveyCondition::DflGaze => "dfl_gaze",
        }
    }

    fn parse(s: &str) -> Option<SurveyCondition> {
        Self::ALL.iter().copied().find(|c| c.token() == s)
    }
}

/// Facial attributes a viewer can cite as informing their decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    ForeheadHair,
    Nose,
    ChinJaw,
    Eyes,
    Mouth,
    Eyebrows,
    Cheeks,
    Other,
    None,
}

impl Attribute {
    pub const ALL: [Attribute; 9] = [
        Attribute::ForeheadHair,
        Attribute::Nose,
        Attribute::ChinJaw,
        Attribute::Eyes,
        Attribute::Mouth,
        Attribute::Eyebrows,
        Attribute::Cheeks,
        Attribute::Other,
        Attribute::None,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Attribute::ForeheadHair => "forehead_hair",
            Attribute::Nose => "nose",
            Attribute::ChinJaw => "chin_jaw",
            Attribute::Eyes => "eyes",
            Attribute::Mouth => "mouth",
            Attribute::Eyebrows => "eyebrows",
            Attribute::Cheeks => "cheeks",
            Attribute::Other => "other",
            Attribute::None => "none",
        }
    }

    fn parse(s: &str) -> Option<Attribute> {
        Self::ALL.iter().copied().find(|a| a.token() == s)
    }
}

/// Adjective-pair labels for the five 7-point scales, normal pole
/// first.
pub const ADJECTIVE_PAIRS: [&str; 5] = [
    "real/synthetic",
    "agreeable/repulsive",
    "unremarkable/unusual",
    "plain/weird",
    "ordinary/uncanny",
];

#[derive(Clone, Debug)]
pub struct SurveyResponse {
    pub participant_id: String,
    pub stimulus_id: String,
    pub condition: SurveyCondition,
    /// Deepfake confidence slider in [0, 100].
    pub confidence: f64,
    pub attributes: BTreeSet<Attribute>,
    /// Five 7-point bipolar adjective scores.
    pub likert: [u8; 5],
}

/// Parse a response table. Expected header:
/// `participant_id,stimulus_id,condition,confidence,attributes,likert1..likert5`
/// with attributes as semicolon-joined tokens.
pub fn read_survey_csv<R: Read>(reader: R) -> Result<Vec<SurveyResponse>, StatsError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut out = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 2; // header is line 1
        let err = |msg: String| StatsError::Csv { line, msg };
        let record = record.map_err(|e| err(e.to_string()))?;
        if record.len() != 10 {
            return Err(err(format!("expected 10 columns, got {}", record.len())));
        }
        let condition = SurveyCondition::parse(&record[2])
            .ok_or_else(|| err(format!("unknown condition `{}`", &record[2])))?;
        let confidence: f64 = record[3]
            .parse()
            .map_err(|_| err(format!("bad confidence `{}`", &record[3])))?;
        if !(0.0..=100.0).contains(&confidence) {
            return Err(err(format!("confidence {confidence} outside [0,100]")));
        }
        let mut attributes = BTreeSet::new();
        for tok in record[4].split(';').filter(|t| !t.is_empty()) {
            let a = Attribute::parse(tok).ok_or_else(|| err(format!("unknown attribute `{tok}`")))?;
            attributes.insert(a);
        }
        if attributes.contains(&Attribute::None) && attributes.len() > 1 {
            return Err(err("`none` is exclusive with other attributes".into()));
        }
        let mut likert = [0u8; 5];
        for (k, slot) in likert.iter_mut().enumerate() {
            let v: u8 = record[5 + k]
                .parse()
                .map_err(|_| err(format!("bad likert value `{}`", &record[5 + k])))?;
            if !(1..=7).contains(&v) {
                return Err(err(format!("likert value {v} outside 1..7")));
            }
            *slot = v;
        }
        out.push(SurveyResponse {
            participant_id: record[0].to_string(),
            stimulus_id: record[1].to_string(),
            condition,
            confidence,
            attributes,
            likert,
        });
    }
    if out.is_empty() {
        return Err(StatsError::Empty("survey csv"));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Analysis report
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct UncanninessCell {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct NamedTest {
    pub name: String,
    pub statistic_label: &'static str,
    pub statistic: f64,
    pub p_two_sided: f64,
    pub method: PMethod,
}

#[derive(Clone, Debug, Serialize)]
pub struct DetectionRow {
    pub condition: SurveyCondition,
    pub responses: usize,
    pub coded: usize,
    pub excluded_at_50: usize,
    pub likelihood_percent: Option<f64>,
    pub ci95: Option<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PrevalenceCell {
    pub percent: f64,
    pub ci95: (f64, f64),
    pub selected: usize,
    pub n: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct PrevalenceRow {
    pub attribute: Attribute,
    pub condition: SurveyCondition,
    /// Among responses coded as perceived-real.
    pub perceived_real: Option<PrevalenceCell>,
    /// Among responses coded as perceived-deepfake.
    pub perceived_deepfake: Option<PrevalenceCell>,
    /// Across all responses regardless of coding.
    pub total: PrevalenceCell,
}

#[derive(Clone, Debug, Serialize)]
pub struct SurveyAnalysis {
    /// [adjective pair][condition] cells; last row is the average
    /// uncanniness score.
    pub uncanniness_rows: Vec<(String, BTreeMap<SurveyCondition, UncanninessCell>)>,
    pub uncanniness_tests: Vec<NamedTest>,
    pub detection: Vec<DetectionRow>,
    pub detection_tests: Vec<NamedTest>,
    pub prevalence: Vec<PrevalenceRow>,
    pub prevalence_tests: Vec<NamedTest>,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn wald_ci(selected: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let p = selected as f64 / n as f64;
    let half = 1.96 * (p * (1.0 - p) / n as f64).sqrt();
    (
        ((p - half) * 100.0).max(0.0),
        ((p + half) * 100.0).min(100.0),
    )
}

fn prevalence_cell(responses: &[&SurveyResponse], attribute: Attribute) -> PrevalenceCell {
    let n = responses.len();
    let selected = responses
        .iter()
        .filter(|r| r.attributes.contains(&attribute))
        .count();
    let percent = if n == 0 {
        0.0
    } else {
        selected as f64 / n as f64 * 100.0
    };
    PrevalenceCell {
        percent,
        ci95: wald_ci(selected, n),
        selected,
        n,
    }
}

/// The full survey analysis: uncanniness scores with paired Wilcoxon
/// tests against the real condition, detection coding with
/// Mann-Whitney comparisons, and attribute prevalence with the
/// Kruskal-Wallis check on the eyes attribute.
pub fn analyze_survey(responses: &[SurveyResponse]) -> Result<SurveyAnalysis, StatsError> {
    if responses.is_empty() {
        return Err(StatsError::Empty("survey"));
    }
    let by_condition = |c: SurveyCondition| -> Vec<&SurveyResponse> {
        responses.iter().filter(|r| r.condition == c).collect()
    };

    // uncanniness per adjective pair and the averaged score
    let mut uncanniness_rows = Vec::new();
    for (k, label) in ADJECTIVE_PAIRS.iter().enumerate() {
        let mut cells = BTreeMap::new();
        for c in SurveyCondition::ALL {
            let vals: Vec<f64> = by_condition(c).iter().map(|r| r.likert[k] as f64).collect();
            let (mean, sd) = mean_sd(&vals);
            cells.insert(
                c,
                UncanninessCell {
                    mean,
                    sd,
                    n: vals.len(),
                },
            );
        }
        uncanniness_rows.push((label.to_string(), cells));
    }
    {
        let mut cells = BTreeMap::new();
        for c in SurveyCondition::ALL {
            let vals: Vec<f64> = by_condition(c)
                .iter()
                .map(|r| uncanniness_score(&r.likert))
                .collect();
            let (mean, sd) = mean_sd(&vals);
            cells.insert(
                c,
                UncanninessCell {
                    mean,
                    sd,
                    n: vals.len(),
                },
            );
        }
        uncanniness_rows.push(("average".to_string(), cells));
    }

    // paired Wilcoxon per participant: real vs each swap condition
    let mut per_participant: BTreeMap<&str, BTreeMap<SurveyCondition, Vec<f64>>> = BTreeMap::new();
    for r in responses {
        per_participant
            .entry(r.participant_id.as_str())
            .or_default()
            .entry(r.condition)
            .or_default()
            .push(uncanniness_score(&r.likert));
    }
    let mut uncanniness_tests = Vec::new();
    for c in [
        SurveyCondition::Dfl,
        SurveyCondition::DflEm,
        SurveyCondition::DflGaze,
    ] {
        let mut real_means = Vec::new();
        let mut cond_means = Vec::new();
        for scores in per_participant.values() {
            if let (Some(r), Some(s)) = (scores.get(&SurveyCondition::Real), scores.get(&c)) {
                real_means.push(r.iter().sum::<f64>() / r.len() as f64);
                cond_means.push(s.iter().sum::<f64>() / s.len() as f64);
            }
        }
        if !real_means.is_empty() {
            let t = wilcoxon_signed_rank(&cond_means, &real_means)?;
            uncanniness_tests.push(NamedTest {
                name: format!("uncanniness {} vs real (paired)", c.token()),
                statistic_label: "W",
                statistic: t.w,
                p_two_sided: t.p_two_sided,
                method: t.method,
            });
        }
    }

    // detection coding per condition
    let mut detection = Vec::new();
    let mut coded_by_condition: BTreeMap<SurveyCondition, Vec<f64>> = BTreeMap::new();
    for c in SurveyCondition::ALL {
        let rs = by_condition(c);
        let confidences: Vec<f64> = rs.iter().map(|r| r.confidence).collect();
        let coding = code_detection(&confidences);
        let ci = coding.mean_likelihood_percent.map(|_| {
            let ones = coding.codes.iter().filter(|&&v| v == 1).count();
            wald_ci(ones, coding.codes.len())
        });
        coded_by_condition.insert(c, coding.codes.iter().map(|&v| v as f64).collect());
        detection.push(DetectionRow {
            condition: c,
            responses: rs.len(),
            coded: coding.codes.len(),
            excluded_at_50: coding.excluded,
            likelihood_percent: coding.mean_likelihood_percent,
            ci95: ci,
        });
    }
    let mut detection_tests = Vec::new();
    let pairs = [
        (SurveyCondition::Dfl, SurveyCondition::Real),
        (SurveyCondition::DflEm, SurveyCondition::Real),
        (SurveyCondition::DflGaze, SurveyCondition::Real),
        (SurveyCondition::DflEm, SurveyCondition::Dfl),
        (SurveyCondition::DflGaze, SurveyCondition::Dfl),
        (SurveyCondition::DflGaze, SurveyCondition::DflEm),
    ];
    for (a, b) in pairs {
        let (ca, cb) = (&coded_by_condition[&a], &coded_by_condition[&b]);
        if !ca.is_empty() && !cb.is_empty() {
            let t = mann_whitney_u(ca, cb)?;
            detection_tests.push(NamedTest {
                name: format!("detection {} vs {}", a.token(), b.token()),
                statistic_label: "U",
                statistic: t.u,
                p_two_sided: t.p_two_sided,
                method: t.method,
            });
        }
    }

    // attribute prevalence by perceived class
    let mut prevalence = Vec::new();
    for attribute in Attribute::ALL {
        for c in SurveyCondition::ALL {
            let rs = by_condition(c);
            let seen_real: Vec<&SurveyResponse> = rs
                .iter()
                .filter(|r| r.confidence < 50.0)
                .copied()
                .collect();
            let seen_fake: Vec<&SurveyResponse> = rs
                .iter()
                .filter(|r| r.confidence > 50.0)
                .copied()
                .collect();
            prevalence.push(PrevalenceRow {
                attribute,
                condition: c,
                perceived_real: (!seen_real.is_empty())
                    .then(|| prevalence_cell(&seen_real, attribute)),
                perceived_deepfake: (!seen_fake.is_empty())
                    .then(|| prevalence_cell(&seen_fake, attribute)),
                total: prevalence_cell(&rs, attribute),
            });
        }
    }

    // eyes attribute across conditions, perceived-deepfake subset
    let mut prevalence_tests = Vec::new();
    let eyes_groups: Vec<Vec<f64>> = SurveyCondition::ALL
        .iter()
        .map(|&c| {
            by_condition(c)
                .iter()
                .filter(|r| r.confidence > 50.0)
                .map(|r| r.attributes.contains(&Attribute::Eyes) as u8 as f64)
                .collect()
        })
        .collect();
    if eyes_groups.iter().filter(|g| !g.is_empty()).count() >= 2 {
        let k = kruskal_wallis(&eyes_groups)?;
        prevalence_tests.push(NamedTest {
            name: "eyes prevalence across conditions (perceived deepfake)".into(),
            statistic_label: "H",
            statistic: k.h,
            p_two_sided: k.p,
            method: PMethod::NormalApprox,
        });
        for (i, a) in SurveyCondition::ALL.iter().enumerate() {
            for b in SurveyCondition::ALL.iter().skip(i + 1) {
                let (ga, gb) = (&eyes_groups[i], &eyes_groups
                    [SurveyCondition::ALL.iter().position(|c| c == b).unwrap()]);
                if !ga.is_empty() && !gb.is_empty() {
                    let t = mann_whitney_u(ga, gb)?;
                    prevalence_tests.push(NamedTest {
                        name: format!("eyes prevalence {} vs {}", a.token(), b.token()),
                        statistic_label: "U",
                        statistic: t.u,
                        p_two_sided: t.p_two_sided,
                        method: t.method,
                    });
                }
            }
        }
    }

    Ok(SurveyAnalysis {
        uncanniness_rows,
        uncanniness_tests,
        detection,
        detection_tests,
        prevalence,
        prevalence_tests,
    })
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

fn fmt_p(p: f64) -> String {
    if p < 0.0001 {
        "<0.0001".to_string()
    } else {
        format!("{p:.4}")
    }
}

impl SurveyAnalysis {
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("# Survey analysis\n\n");
        out.push_str("## Uncanniness (7-point bipolar adjective scales)\n\n");
        out.push_str("| Adjective pair |");
        for c in SurveyCondition::ALL {
            out.push_str(&format!(" {} |", c.token()));
        }
        out.push_str("\n|---|---|---|---|---|\n");
        for (label, cells) in &self.uncanniness_rows {
            out.push_str(&format!("| {label} |"));
            for c in SurveyCondition::ALL {
                let cell = &cells[&c];
                out.push_str(&format!(" {:.2} ± {:.2} |", cell.mean, cell.sd));
            }
            out.push('\n');
        }
        out.push('\n');
        for t in &self.uncanniness_tests {
            out.push_str(&format!(
                "- {}: {} = {:.2}, p = {}\n",
                t.name,
                t.statistic_label,
                t.statistic,
                fmt_p(t.p_two_sided)
            ));
        }

        out.push_str("\n## Deepfake detection (coded likelihood)\n\n");
        out.push_str(
            "| Condition | Responses | Coded | At 50 (excluded) | Likelihood | 95% CI |\n|---|---|---|---|---|---|\n",
        );
        for row in &self.detection {
            let (lik, ci) = match (row.likelihood_percent, row.ci95) {
                (Some(l), Some((lo, hi))) => {
                    (format!("{l:.2}%"), format!("[{lo:.2}, {hi:.2}]"))
                }
                _ => ("no codable responses".to_string(), "-".to_string()),
            };
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} |\n",
                row.condition.token(),
                row.responses,
                row.coded,
                row.excluded_at_50,
                lik,
                ci
            ));
        }
        out.push('\n');
        for t in &self.detection_tests {
            out.push_str(&format!(
                "- {}: {} = {:.1}, p = {}\n",
                t.name,
                t.statistic_label,
                t.statistic,
                fmt_p(t.p_two_sided)
            ));
        }

        out.push_str("\n## Attribute prevalence by perceived class\n\n");
        out.push_str(
            "| Attribute | Condition | Perceived real | Perceived deepfake | Total |\n|---|---|---|---|---|\n",
        );
        for row in &self.prevalence {
            let cell = |c: &Option<PrevalenceCell>| match c {
                Some(c) => format!("{:.2}% [{:.2}, {:.2}]", c.percent, c.ci95.0, c.ci95.1),
                None => "-".to_string(),
            };
            out.push_str(&format!(
                "| {} | {} | {} | {} | {:.2}% |\n",
                row.attribute.token(),
                row.condition.token(),
                cell(&row.perceived_real),
                cell(&row.perceived_deepfake),
                row.total.percent
            ));
        }
        out.push('\n');
        for t in &self.prevalence_tests {
            out.push_str(&format!(
                "- {}: {} = {:.2}, p = {}\n",
                t.name,
                t.statistic_label,
                t.statistic,
                fmt_p(t.p_two_sided)
            ));
        }
        out
    }

    pub fn detection_csv(&self) -> String {
        let mut out =
            String::from("condition,responses,coded,excluded_at_50,likelihood_percent,ci_lo,ci_hi\n");
        for row in &self.detection {
            let (lik, lo, hi) = match (row.likelihood_percent, row.ci95) {
                (Some(l), Some((lo, hi))) => {
                    (format!("{l:.6}"), format!("{lo:.6}"), format!("{hi:.6}"))
                }
                _ => ("".to_string(), "".to_string(), "".to_string()),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.condition.token(),
                row.responses,
                row.coded,
                row.excluded_at_50,
                lik,
                lo,
                hi
            ));
        }
        out
    }

    pub fn prevalence_csv(&self) -> String {
        let mut out = String::from(
            "attribute,condition,real_percent,real_ci_lo,real_ci_hi,fake_percent,fake_ci_lo,fake_ci_hi,total_percent\n",
        );
        for row in &self.prevalence {
            let cell = |c: &Option<PrevalenceCell>| match c {
                Some(c) => format!("{:.6},{:.6},{:.6}", c.percent, c.ci95.0, c.ci95.1),
                None => ",,".to_string(),
            };
            out.push_str(&format!(
                "{},{},{},{},{:.6}\n",
                row.attribute.token(),
                row.condition.token(),
                cell(&row.perceived_real),
                cell(&row.perceived_deepfake),
                row.total.percent
            ));
        }
        out
    }

    pub fn tests_csv(&self) -> String {
        let mut out = String::from("test,statistic_label,statistic,p_two_sided,method\n");
        for t in self
            .uncanniness_tests
            .iter()
            .chain(&self.detection_tests)
            .chain(&self.prevalence_tests)
        {
            out.push_str(&format!(
                "{},{},{:.6},{:.10},{}\n",
                t.name,
                t.statistic_label,
                t.statistic,
                t.p_two_sided,
                match t.method {
                    PMethod::Exact => "exact",
                    PMethod::NormalApprox => "normal_approx",
                    PMethod::Degenerate => "degenerate",
                }
            ));
        }
        out
    }
}
