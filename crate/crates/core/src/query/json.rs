//! JSON wire format for queries.
//!
//! One query per line:
//! `{"expr": {...}, "agg": {"type": "count"|"limit"|"sort", "limit": n, "sort": [[field, "asc"|"desc"], ...]}}`
//!
//! Expressions nest operator-first objects: a comparison leaf is
//! `{"$eq": {"name": "Jane"}}`, a logical node is `{"$and": [child, ...]}`.
//! Date literals are wrapped as `{"$date": 1394135731965}`.

use serde::de::Error as DeError;
use serde::ser::{Error as SerError, SerializeMap};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use super::ast::{
    Aggregation, ComparisonOp, Expr, FieldName, Literal, LogicalOp, QueryAst, SortDirection,
};

impl Serialize for Literal {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        match self {
            Literal::Str(s) => ser.serialize_str(s),
            Literal::Int(n) => ser.serialize_i64(*n),
            Literal::Date(ms) => {
                let mut map = ser.serialize_map(Some(1))?;
                map.serialize_entry("$date", ms)?;
                map.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for Literal {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(de)?;
        literal_from_value(&value).map_err(D::Error::custom)
    }
}

fn literal_from_value(value: &Value) -> Result<Literal, String> {
    match value {
        Value::String(s) => Ok(Literal::Str(s.clone())),
        Value::Number(n) => n
            .as_i64()
            .map(Literal::Int)
            .ok_or_else(|| format!("integer literal out of range: {n}")),
        Value::Object(map) => {
            if map.len() == 1 {
                if let Some(ms) = map.get("$date").and_then(Value::as_i64) {
                    return Ok(Literal::Date(ms));
                }
            }
            Err(format!("unsupported literal object: {value}"))
        }
        other => Err(format!("unsupported literal: {other}")),
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let mut map = ser.serialize_map(Some(1))?;
        match self {
            Expr::Compare { op, field, value } => {
                let mut inner = serde_json::Map::with_capacity(1);
                let v = serde_json::to_value(value).map_err(S::Error::custom)?;
                inner.insert(field.as_str().to_owned(), v);
                map.serialize_entry(op.token(), &inner)?;
            }
            Expr::Logical { op, children } => {
                map.serialize_entry(op.token(), children)?;
            }
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(de)?;
        expr_from_value(&value).map_err(D::Error::custom)
    }
}

fn expr_from_value(value: &Value) -> Result<Expr, String> {
    let map = value
        .as_object()
        .ok_or_else(|| format!("expression must be an object, got {value}"))?;
    if map.len() != 1 {
        return Err(format!(
            "expression object must have exactly one key: {value}"
        ));
    }
    let (key, inner) = map.iter().next().expect("len checked");
    if let Some(op) = LogicalOp::from_token(key) {
        let children: Vec<Expr> = match inner {
            Value::Array(items) => items
                .iter()
                .map(expr_from_value)
                .collect::<Result<_, _>>()?,
            // `$not` conventionally wraps a single object
            Value::Object(_) => vec![expr_from_value(inner)?],
            other => {
                return Err(format!(
                    "`{key}` expects an array of expressions, got {other}"
                ))
            }
        };
        return Ok(Expr::Logical { op, children });
    }
    if let Some(op) = ComparisonOp::from_token(key) {
        let inner = inner
            .as_object()
            .filter(|m| m.len() == 1)
            .ok_or_else(|| format!("`{key}` expects a single {{field: value}} object"))?;
        let (field, raw) = inner.iter().next().expect("len checked");
        let value = literal_from_value(raw)?;
        return Ok(Expr::Compare {
            op,
            field: FieldName::new(field.clone()),
            value,
        });
    }
    Err(format!("unknown operator `{key}`"))
}

#[derive(Serialize, Deserialize)]
struct AggWire {
    #[serde(rename = "type")]
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    limit: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sort: Option<Vec<(FieldName, SortDirection)>>,
}

impl Serialize for Aggregation {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let wire = match self {
            Aggregation::Count => AggWire {
                kind: "count".into(),
                limit: None,
                sort: None,
            },
            Aggregation::Limit(n) => AggWire {
                kind: "limit".into(),
                limit: Some(*n),
                sort: None,
            },
            Aggregation::SortThenLimit { keys, limit } => AggWire {
                kind: "sort".into(),
                limit: Some(*limit),
                sort: Some(keys.clone()),
            },
        };
        wire.serialize(ser)
    }
}

impl<'de> Deserialize<'de> for Aggregation {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let wire = AggWire::deserialize(de)?;
        match wire.kind.as_str() {
            "count" => Ok(Aggregation::Count),
            "limit" => {
                let n = wire
                    .limit
                    .ok_or_else(|| D::Error::custom("limit aggregation requires `limit`"))?;
                Ok(Aggregation::Limit(n))
            }
            "sort" => {
                let keys = wire
                    .sort
                    .ok_or_else(|| D::Error::custom("sort aggregation requires `sort`"))?;
                let limit = wire
                    .limit
                    .ok_or_else(|| D::Error::custom("sort aggregation requires `limit`"))?;
                Ok(Aggregation::SortThenLimit { keys, limit })
            }
            other => Err(D::Error::custom(format!(
                "unknown aggregation type `{other}`"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct QueryWire {
    expr: Expr,
    agg: Aggregation,
}

impl Serialize for QueryAst {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        QueryWire {
            expr: self.expr.clone(),
            agg: self.agg.clone(),
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for QueryAst {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let wire = QueryWire::deserialize(de)?;
        Ok(QueryAst {
            expr: wire.expr,
            agg: wire.agg,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(q: &QueryAst) -> QueryAst {
        let line = serde_json::to_string(q).unwrap();
        serde_json::from_str(&line).unwrap()
    }

    #[test]
    fn leaf_roundtrip() {
        let q = QueryAst {
            expr: Expr::Compare {
                op: ComparisonOp::Eq,
                field: FieldName::new("name"),
                value: Literal::Str("Jane".into()),
            },
            agg: Aggregation::Count,
        };
        assert_eq!(roundtrip(&q), q);
        let line = serde_json::to_string(&q).unwrap();
        assert_eq!(
            line,
            r#"{"expr":{"$eq":{"name":"Jane"}},"agg":{"type":"count"}}"#
        );
    }

    #[test]
    fn nested_or_with_date_roundtrip() {
        let q = QueryAst {
            expr: Expr::Logical {
                op: LogicalOp::Or,
                children: vec![
                    Expr::Compare {
                        op: ComparisonOp::Eq,
                        field: FieldName::new("f2"),
                        value: Literal::Str("centimeter".into()),
                    },
                    Expr::Compare {
                        op: ComparisonOp::Gte,
                        field: FieldName::new("f10"),
                        value: Literal::Date(1_394_135_731_965),
                    },
                ],
            },
            agg: Aggregation::Limit(10),
        };
        assert_eq!(roundtrip(&q), q);
        let line = serde_json::to_string(&q).unwrap();
        assert!(line.contains(r#""$date":1394135731965"#), "{line}");
    }

    #[test]
    fn sort_agg_roundtrip() {
        let q = QueryAst {
            expr: Expr::Compare {
                op: ComparisonOp::Gt,
                field: FieldName::new("age"),
                value: Literal::Int(30),
            },
            agg: Aggregation::SortThenLimit {
                keys: vec![
                    (FieldName::new("age"), SortDirection::Desc),
                    (FieldName::new("name"), SortDirection::Asc),
                ],
                limit: 5,
            },
        };
        assert_eq!(roundtrip(&q), q);
    }

    #[test]
    fn unknown_operator_rejected() {
        let err = serde_json::from_str::<QueryAst>(
            r#"{"expr":{"$regex":{"f0":"x"}},"agg":{"type":"count"}}"#,
        );
        assert!(err.is_err());
    }

    #[test]
    fn not_accepts_single_object() {
        let q: QueryAst =
            serde_json::from_str(r#"{"expr":{"$not":{"$eq":{"f0":"x"}}},"agg":{"type":"count"}}"#)
                .unwrap();
        match q.expr {
            Expr::Logical {
                op: LogicalOp::Not,
                children,
            } => assert_eq!(children.len(), 1),
            other => panic!("expected $not, got {other:?}"),
        }
    }
}
