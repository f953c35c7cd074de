//! Filter and sort grammar for the application list.
//!
//! A filter is a comma-separated conjunction of predicates:
//!
//! ```text
//! age>=30,nationality=foreign,monthly_income in 1000..2500,decision=rejected
//! ```
//!
//! Operators are `=`, `!=`, `<`, `<=`, `>`, `>=` and the inclusive range
//! `in lo..hi`. Fields are dataset attributes plus `confidence`, `decision`
//! and `judgment`. Categorical values are given by label (or category
//! index) and compare by index. A sort key is a field name, optionally
//! prefixed by `-` for descending order; ties fall back to ascending id.

use std::cmp::Ordering;

use loanlens_core::dataset::Schema;
use loanlens_core::{AttributeSpec, Decision};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Op {
    fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Op::Eq => lhs == rhs,
            Op::Ne => lhs != rhs,
            Op::Lt => lhs < rhs,
            Op::Le => lhs <= rhs,
            Op::Gt => lhs > rhs,
            Op::Ge => lhs >= rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Field {
    Attribute(String),
    Confidence,
    Decision,
    Judgment,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Test {
    Compare(Op, f64),
    Range(f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub field: Field,
    pub test: Test,
}

/// Numeric view of one list row.
pub trait Row {
    fn id(&self) -> &str;
    fn attribute(&self, name: &str) -> Option<f64>;
    fn confidence(&self) -> f64;
    fn decision(&self) -> Decision;
    /// 0 unjudged, 1 fair, 2 unfair.
    fn judgment_rank(&self) -> u8;
}

fn field_value<R: Row + ?Sized>(row: &R, field: &Field) -> Option<f64> {
    Some(match field {
        Field::Attribute(name) => row.attribute(name)?,
        Field::Confidence => row.confidence(),
        Field::Decision => decision_rank(row.decision()),
        Field::Judgment => f64::from(row.judgment_rank()),
    })
}

fn decision_rank(d: Decision) -> f64 {
    match d {
        Decision::Accepted => 0.0,
        Decision::Rejected => 1.0,
    }
}

impl Predicate {
    pub fn matches<R: Row + ?Sized>(&self, row: &R) -> bool {
        let Some(v) = field_value(row, &self.field) else {
            return false;
        };
        match self.test {
            Test::Compare(op, rhs) => op.holds(v, rhs),
            Test::Range(lo, hi) => lo <= v && v <= hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryError(pub String);

fn err<T>(message: impl Into<String>) -> Result<T, QueryError> {
    Err(QueryError(message.into()))
}

fn parse_field<'s>(name: &str, schema: &'s Schema) -> Result<(Field, Option<&'s AttributeSpec>), QueryError> {
    match name {
        "confidence" => Ok((Field::Confidence, None)),
        "decision" => Ok((Field::Decision, None)),
        "judgment" => Ok((Field::Judgment, None)),
        _ => match schema.attribute(name) {
            Some(spec) => Ok((Field::Attribute(name.to_string()), Some(spec))),
            None => err(format!("unknown field {name:?}")),
        },
    }
}

fn parse_value(raw: &str, field: &Field, spec: Option<&AttributeSpec>) -> Result<f64, QueryError> {
    let raw = raw.trim();
    let number = || raw.parse::<f64>().ok().filter(|v| v.is_finite());
    let labelled = |labels: &[&str]| {
        labels
            .iter()
            .position(|l| *l == raw)
            .map(|i| i as f64)
            .or_else(|| number().filter(|v| v.fract() == 0.0 && *v >= 0.0 && *v < labels.len() as f64))
    };
    let value = match (field, spec) {
        (Field::Decision, _) => labelled(&["accepted", "rejected"]),
        (Field::Judgment, _) => labelled(&["unjudged", "fair", "unfair"]),
        (Field::Attribute(_), Some(spec)) if !spec.is_continuous() => spec
            .category_index(raw)
            .map(|i| i as f64)
            .or_else(|| number().filter(|v| spec.category_label(*v).is_some())),
        _ => number(),
    };
    match value {
        Some(v) => Ok(v),
        None => err(format!("invalid value {raw:?}")),
    }
}

fn parse_predicate(text: &str, schema: &Schema) -> Result<Predicate, QueryError> {
    let text = text.trim();
    if let Some((name, range)) = text.split_once(" in ") {
        let (field, spec) = parse_field(name.trim(), schema)?;
        let Some((lo, hi)) = range.split_once("..") else {
            return err(format!("range must be lo..hi in {text:?}"));
        };
        let (lo, hi) = (parse_value(lo, &field, spec)?, parse_value(hi, &field, spec)?);
        if lo > hi {
            return err(format!("empty range in {text:?}"));
        }
        return Ok(Predicate {
            field,
            test: Test::Range(lo, hi),
        });
    }
    const OPS: [(&str, Op); 6] = [
        ("<=", Op::Le),
        (">=", Op::Ge),
        ("!=", Op::Ne),
        ("=", Op::Eq),
        ("<", Op::Lt),
        (">", Op::Gt),
    ];
    let Some((at, sym, op)) = OPS
        .iter()
        .filter_map(|(sym, op)| text.find(sym).map(|at| (at, *sym, *op)))
        .min_by_key(|(at, sym, _)| (*at, std::cmp::Reverse(sym.len())))
    else {
        return err(format!("no operator in {text:?}"));
    };
    let (field, spec) = parse_field(text[..at].trim(), schema)?;
    let value = parse_value(&text[at + sym.len()..], &field, spec)?;
    Ok(Predicate {
        field,
        test: Test::Compare(op, value),
    })
}

/// Parses a filter expression; an empty string matches everything.
pub fn parse_filter(text: &str, schema: &Schema) -> Result<Vec<Predicate>, QueryError> {
    text.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| parse_predicate(p, schema))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SortField {
    #[default]
    Id,
    Decision,
    Confidence,
    Judgment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SortKey {
    pub field: SortField,
    pub descending: bool,
}

pub fn parse_sort(text: &str) -> Result<SortKey, QueryError> {
    let text = text.trim();
    let (descending, name) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let field = match name {
        "" | "id" => SortField::Id,
        "decision" => SortField::Decision,
        "confidence" => SortField::Confidence,
        "judgment" => SortField::Judgment,
        other => return err(format!("cannot sort by {other:?}")),
    };
    Ok(SortKey { field, descending })
}

impl SortKey {
    pub fn compare<R: Row + ?Sized>(&self, a: &R, b: &R) -> Ordering {
        let key = match self.field {
            SortField::Id => a.id().cmp(b.id()),
            SortField::Decision => decision_rank(a.decision()).total_cmp(&decision_rank(b.decision())),
            SortField::Confidence => a.confidence().total_cmp(&b.confidence()),
            SortField::Judgment => a.judgment_rank().cmp(&b.judgment_rank()),
        };
        let key = if self.descending { key.reverse() } else { key };
        key.then_with(|| a.id().cmp(b.id()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct R {
        id: String,
        age: f64,
        nat: f64,
        conf: f64,
        judged: u8,
    }

    impl Row for R {
        fn id(&self) -> &str {
            &self.id
        }
        fn attribute(&self, name: &str) -> Option<f64> {
            match name {
                "age" => Some(self.age),
                "nationality" => Some(self.nat),
                _ => None,
            }
        }
        fn confidence(&self) -> f64 {
            self.conf
        }
        fn decision(&self) -> Decision {
            if self.conf > 0.5 {
                Decision::Accepted
            } else {
                Decision::Rejected
            }
        }
        fn judgment_rank(&self) -> u8 {
            self.judged
        }
    }

    fn schema() -> Schema {
        Schema::new(
            "id",
            "decision",
            vec![
                AttributeSpec::continuous("age", ""),
                AttributeSpec::binary("nationality", "citizen", "foreign", ""),
            ],
        )
        .unwrap()
    }

    fn row(id: &str, age: f64, nat: f64, conf: f64, judged: u8) -> R {
        R {
            id: id.into(),
            age,
            nat,
            conf,
            judged,
        }
    }

    #[test]
    fn parses_every_operator() {
        let s = schema();
        let p = parse_filter(
            "age>=30, nationality=foreign, confidence in 0.2..0.8, decision!=accepted",
            &s,
        )
        .unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p[0].test, Test::Compare(Op::Ge, 30.0));
        assert_eq!(p[1].test, Test::Compare(Op::Eq, 1.0));
        assert_eq!(p[2].test, Test::Range(0.2, 0.8));
        assert_eq!(
            p[3],
            Predicate {
                field: Field::Decision,
                test: Test::Compare(Op::Ne, 0.0)
            }
        );
        assert_eq!(parse_filter("age<3", &s).unwrap()[0].test, Test::Compare(Op::Lt, 3.0));
        assert_eq!(parse_filter("age>3", &s).unwrap()[0].test, Test::Compare(Op::Gt, 3.0));
        assert_eq!(parse_filter("age<=3", &s).unwrap()[0].test, Test::Compare(Op::Le, 3.0));
        assert!(parse_filter("", &s).unwrap().is_empty());
        assert_eq!(
            parse_filter("judgment=2", &s).unwrap()[0].test,
            Test::Compare(Op::Eq, 2.0)
        );
    }

    #[test]
    fn rejects_malformed_filters() {
        let s = schema();
        for bad in [
            "height>3",
            "age",
            "age>x",
            "nationality=martian",
            "age in 5..1",
            "age in 5",
            "judgment=maybe",
            "judgment=3",
            "decision=0.5",
        ] {
            assert!(parse_filter(bad, &s).is_err(), "{bad}");
        }
    }

    #[test]
    fn conjunction_and_range_are_inclusive() {
        let s = schema();
        let p = parse_filter("age in 30..40,nationality=1", &s).unwrap();
        let hit = |r: &R| p.iter().all(|q| q.matches(r));
        assert!(hit(&row("a", 30.0, 1.0, 0.1, 0)));
        assert!(hit(&row("a", 40.0, 1.0, 0.1, 0)));
        assert!(!hit(&row("a", 40.5, 1.0, 0.1, 0)));
        assert!(!hit(&row("a", 35.0, 0.0, 0.1, 0)));
    }

    #[test]
    fn sort_orders_with_id_tiebreak() {
        let mut rows = [
            row("c", 0.0, 0.0, 0.7, 2),
            row("a", 0.0, 0.0, 0.7, 0),
            row("b", 0.0, 0.0, 0.2, 1),
        ];
        let key = parse_sort("-confidence").unwrap();
        rows.sort_by(|x, y| key.compare(x, y));
        assert_eq!(rows.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["a", "c", "b"]);
        let key = parse_sort("judgment").unwrap();
        rows.sort_by(|x, y| key.compare(x, y));
        assert_eq!(rows.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        let key = parse_sort("-id").unwrap();
        rows.sort_by(|x, y| key.compare(x, y));
        assert_eq!(rows.iter().map(|r| r.id.as_str()).collect::<Vec<_>>(), ["c", "b", "a"]);
        assert!(parse_sort("age").is_err());
    }
}
