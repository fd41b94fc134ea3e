//! Minimal RFC 7946 GeoJSON model for polygons, POIs and road networks.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Category, GeoPoint, Poi, PoiKind, Polygon, RoadNetwork};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "coordinates")]
pub enum Geometry {
    Point([f64; 2]),
    LineString(Vec<[f64; 2]>),
    Polygon(Vec<Vec<[f64; 2]>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "Feature")]
pub struct Feature {
    pub geometry: Geometry,
    #[serde(default)]
    pub properties: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename = "FeatureCollection")]
pub struct FeatureCollection {
    pub features: Vec<Feature>,
}

fn xy(p: GeoPoint) -> [f64; 2] {
    [p.x, p.y]
}

fn pt(c: [f64; 2]) -> GeoPoint {
    GeoPoint::new(c[0], c[1])
}

impl Feature {
    pub fn new(geometry: Geometry) -> Self {
        Self { geometry, properties: Map::new() }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.properties.insert(key.to_string(), value.into());
        self
    }

    pub fn prop_str(&self, key: &str) -> Option<&str> {
        self.properties.get(key).and_then(Value::as_str)
    }

    pub fn prop_f64(&self, key: &str) -> Option<f64> {
        self.properties.get(key).and_then(Value::as_f64)
    }

    pub fn prop_u64(&self, key: &str) -> Option<u64> {
        self.properties.get(key).and_then(Value::as_u64)
    }

    /// Exterior ring as a closed, counter-clockwise GeoJSON polygon.
    pub fn polygon(p: &Polygon) -> Self {
        let mut ring: Vec<[f64; 2]> = p.vertices().iter().map(|v| xy(*v)).collect();
        ring.push(ring[0]);
        Self::new(Geometry::Polygon(vec![ring]))
    }

    pub fn point(p: GeoPoint) -> Self {
        Self::new(Geometry::Point(xy(p)))
    }

    pub fn line(a: GeoPoint, b: GeoPoint) -> Self {
        Self::new(Geometry::LineString(vec![xy(a), xy(b)]))
    }

    pub fn poi(p: &Poi) -> Self {
        let mut f = Self::point(p.location)
            .with("id", p.id)
            .with("category", p.category.code())
            .with("kind", p.kind.as_str());
        if let Some(parent) = p.parent_id {
            f = f.with("parent_id", parent);
        }
        f
    }

    pub fn as_point(&self) -> Result<GeoPoint> {
        match &self.geometry {
            Geometry::Point(c) => Ok(pt(*c)),
            g => Err(Error::Format(format!("expected Point geometry, got {g:?}"))),
        }
    }

    pub fn as_polygon(&self) -> Result<Polygon> {
        match &self.geometry {
            Geometry::Polygon(rings) => {
                let ring = rings.first().ok_or_else(|| Error::Format("polygon without rings".into()))?;
                if rings.len() > 1 {
                    return Err(Error::InvalidGeometry("polygons with holes are not supported".into()));
                }
                Polygon::new(ring.iter().map(|c| pt(*c)).collect())
            }
            g => Err(Error::Format(format!("expected Polygon geometry, got {g:?}"))),
        }
    }

    pub fn as_poi(&self) -> Result<Poi> {
        let location = self.as_point()?;
        let id = self.prop_u64("id").ok_or_else(|| Error::Format("POI without id".into()))?;
        let code = self.prop_u64("category").ok_or_else(|| Error::Format("POI without category".into()))?;
        let category = Category::new(u8::try_from(code).map_err(|_| Error::InvalidCategory(u8::MAX))?)?;
        let kind = match self.prop_str("kind") {
            Some("core") => PoiKind::Core,
            Some("entrance") => PoiKind::Entrance,
            Some("generic") | None => PoiKind::Generic,
            Some(other) => return Err(Error::Format(format!("unknown POI kind {other:?}"))),
        };
        Ok(Poi { id, location, category, kind, parent_id: self.prop_u64("parent_id") })
    }
}

impl FeatureCollection {
    pub fn push(&mut self, f: Feature) {
        self.features.push(f);
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Features whose `role` property equals `role`.
    pub fn with_role<'a>(&'a self, role: &'a str) -> impl Iterator<Item = &'a Feature> + 'a {
        self.features.iter().filter(move |f| f.prop_str("role") == Some(role))
    }
}

/// One two-point LineString per road segment.
pub fn road_features(roads: &RoadNetwork) -> Vec<Feature> {
    roads.segment_points().map(|(a, b)| Feature::line(a, b).with("role", "road")).collect()
}

/// Rebuild a road network from LineString features; vertices with identical
/// coordinates are merged into one node.
pub fn roads_from_features<'a>(features: impl Iterator<Item = &'a Feature>) -> Result<RoadNetwork> {
    let mut nodes: Vec<GeoPoint> = Vec::new();
    let mut segments = Vec::new();
    let index = |p: GeoPoint, nodes: &mut Vec<GeoPoint>| -> usize {
        if let Some(i) = nodes.iter().position(|q| *q == p) {
            i
        } else {
            nodes.push(p);
            nodes.len() - 1
        }
    };
    for f in features {
        let Geometry::LineString(coords) = &f.geometry else {
            return Err(Error::Format("road feature is not a LineString".into()));
        };
        for w in coords.windows(2) {
            let a = index(pt(w[0]), &mut nodes);
            let b = index(pt(w[1]), &mut nodes);
            segments.push((a, b));
        }
    }
    RoadNetwork::new(nodes, segments)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polygon_feature_is_closed_ccw_and_round_trips() {
        let p = Polygon::new(vec![
            GeoPoint::new(0.0, 0.0),
            GeoPoint::new(0.0, 1.0),
            GeoPoint::new(1.0, 1.0),
            GeoPoint::new(1.0, 0.0),
        ])
        .unwrap();
        let f = Feature::polygon(&p).with("role", "aoi");
        let mut fc = FeatureCollection::default();
        fc.push(f);
        let json = fc.to_json().unwrap();
        let v: Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["type"], "FeatureCollection");
        assert_eq!(v["features"][0]["type"], "Feature");
        assert_eq!(v["features"][0]["geometry"]["type"], "Polygon");
        let ring = v["features"][0]["geometry"]["coordinates"][0].as_array().unwrap();
        assert_eq!(ring.first(), ring.last());
        let back = FeatureCollection::from_json(&json).unwrap();
        assert_eq!(back.with_role("aoi").next().unwrap().as_polygon().unwrap(), p);
    }

    #[test]
    fn poi_and_roads_round_trip() {
        let poi = Poi {
            id: 7,
            location: GeoPoint::new(121.5, 31.2),
            category: Category::SCHOOL,
            kind: PoiKind::Entrance,
            parent_id: Some(3),
        };
        assert_eq!(Feature::poi(&poi).as_poi().unwrap(), poi);

        let roads = RoadNetwork::new(
            vec![GeoPoint::new(0.0, 0.0), GeoPoint::new(1.0, 0.0), GeoPoint::new(1.0, 1.0)],
            vec![(0, 1), (1, 2)],
        )
        .unwrap();
        let feats = road_features(&roads);
        assert_eq!(roads_from_features(feats.iter()).unwrap(), roads);
    }
}
