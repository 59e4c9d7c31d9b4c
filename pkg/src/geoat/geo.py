"""POI retrieval from an Overpass-compatible OpenStreetMap endpoint.

A recording coordinate is turned into a square bounding box, an Overpass QL
query is issued over that box for a fixed list of feature keys, and the JSON
answer is flattened into :class:`PoiEntity` records.  Responses are cached on
disk by request digest so that repeated runs replay offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from .errors import (
    InvalidBBox,
    InvalidCoordinate,
    InvalidSide,
    MissingField,
    NetworkError,
    ParseError,
    PolarLatitude,
    RateLimited,
)

log = logging.getLogger(__name__)

METERS_PER_DEGREE = 111320.0
MAX_ABS_LAT = 89.0
ENDPOINT_ENV = "GEOAT_OVERPASS_ENDPOINT"
DEFAULT_ENDPOINT = "https://overpass-api.de/api/interpreter"
DEFAULT_FEATURE_KEYS = (
    "landuse",
    "amenity",
    "natural",
    "highway",
    "building",
    "leisure",
    "shop",
    "tourism",
    "railway",
    "waterway",
    "aeroway",
)
ELEMENT_KINDS = ("node", "way", "relation")


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        lat, lon = float(self.lat), float(self.lon)
        if not (math.isfinite(lat) and math.isfinite(lon)):
            raise InvalidCoordinate(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= lat <= 90.0:
            raise InvalidCoordinate(f"latitude {lat} outside [-90, 90]")
        if not -180.0 <= lon <= 180.0:
            raise InvalidCoordinate(f"longitude {lon} outside [-180, 180]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)


@dataclass(frozen=True)
class BBox:
    south: float
    west: float
    north: float
    east: float

    def __post_init__(self):
        vals = (self.south, self.west, self.north, self.east)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidBBox(f"non-finite bbox {vals}")
        if not self.south < self.north:
            raise InvalidBBox(f"south {self.south} must be < north {self.north}")
        if not self.west < self.east:
            raise InvalidBBox(f"west {self.west} must be < east {self.east}")
        if self.south < -90.0 or self.north > 90.0:
            raise InvalidBBox(f"latitude span {self.south}..{self.north} leaves [-90, 90]")
        if self.west < -180.0 or self.east > 180.0:
            # antimeridian-crossing boxes are not representable
            raise InvalidBBox(f"longitude span {self.west}..{self.east} crosses the antimeridian")

    @property
    def center(self) -> tuple[float, float]:
        return ((self.south + self.north) / 2.0, (self.west + self.east) / 2.0)

    def contains(self, other: "BBox") -> bool:
        """Strict containment: every edge of ``other`` lies inside this box."""
        return (
            self.south < other.south
            and self.west < other.west
            and self.north > other.north
            and self.east > other.east
        )


@dataclass(frozen=True)
class PoiEntity:
    osm_id: int
    matched_key: str
    matched_value: str
    tags: dict
    center: Optional[GeoPoint] = None
    kind: str = "node"

    def __post_init__(self):
        if self.tags.get(self.matched_key) != self.matched_value:
            raise ValueError(
                f"matched {self.matched_key}={self.matched_value!r} not present in tags"
            )

    def to_dict(self) -> dict:
        d = {
            "osm_id": self.osm_id,
            "kind": self.kind,
            "matched_key": self.matched_key,
            "matched_value": self.matched_value,
            "tags": dict(self.tags),
        }
        if self.center is not None:
            d["center"] = [self.center.lat, self.center.lon]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PoiEntity":
        center = d.get("center")
        return cls(
            osm_id=int(d["osm_id"]),
            matched_key=d["matched_key"],
            matched_value=d["matched_value"],
            tags=dict(d["tags"]),
            center=GeoPoint(*center) if center is not None else None,
            kind=d.get("kind", "node"),
        )


def _default_endpoint() -> str:
    return os.environ.get(ENDPOINT_ENV, DEFAULT_ENDPOINT)


@dataclass
class GscQueryConfig:
    side_m: float = 1000.0
    feature_keys: tuple = DEFAULT_FEATURE_KEYS
    endpoint: str = field(default_factory=_default_endpoint)
    timeout_s: float = 60.0
    max_retries: int = 3
    min_request_interval_s: float = 1.0
    backoff_s: float = 1.0
    cache_dir: Optional[Path] = None

    def __post_init__(self):
        self.feature_keys = tuple(self.feature_keys)
        if not self.feature_keys:
            raise ValueError("feature_keys must be non-empty")
        if len(set(self.feature_keys)) != len(self.feature_keys):
            raise ValueError(f"feature_keys contain duplicates: {self.feature_keys}")
        if not self.side_m > 0:
            raise InvalidSide(f"side_m must be > 0, got {self.side_m}")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.cache_dir is not None:
            self.cache_dir = Path(self.cache_dir)

    @property
    def effective_endpoint(self) -> str:
        # the environment wins over configured values
        return os.environ.get(ENDPOINT_ENV) or self.endpoint


def bbox_from_center(p: GeoPoint, side_m: float) -> BBox:
    """Square box of side ``side_m`` metres centred on ``p``.

    Uses a flat-earth conversion: 111320 m per degree of latitude and the
    same scaled by cos(lat) per degree of longitude.
    """
    if not side_m > 0:
        raise InvalidSide(f"side_m must be > 0, got {side_m}")
    if abs(p.lat) >= MAX_ABS_LAT:
        raise PolarLatitude(f"|lat| = {abs(p.lat)} >= {MAX_ABS_LAT}; longitude scale ill-conditioned")
    half = side_m / 2.0
    dlat = half / METERS_PER_DEGREE
    dlon = half / (METERS_PER_DEGREE * math.cos(math.radians(p.lat)))
    return BBox(p.lat - dlat, p.lon - dlon, p.lat + dlat, p.lon + dlon)


def build_overpass_query(box: BBox, keys: Sequence[str], timeout_s: float = 60.0) -> str:
    if not keys:
        raise ValueError("keys must be non-empty")
    bbox = f"{box.south:.7f},{box.west:.7f},{box.north:.7f},{box.east:.7f}"
    lines = [f"[out:json][timeout:{int(timeout_s)}];", "("]
    for key in keys:
        for kind in ELEMENT_KINDS:
            lines.append(f'  {kind}["{key}"]({bbox});')
    lines.append(");")
    lines.append("out body center;")
    return "\n".join(lines) + "\n"


def _byte_offset(text: str, char_pos: int) -> int:
    return len(text[:char_pos].encode("utf-8"))


def _element_center(el: dict) -> Optional[GeoPoint]:
    if "lat" in el and "lon" in el:
        lat, lon = el["lat"], el["lon"]
    elif isinstance(el.get("center"), dict) and "lat" in el["center"] and "lon" in el["center"]:
        lat, lon = el["center"]["lat"], el["center"]["lon"]
    else:
        return None
    if isinstance(lat, bool) or isinstance(lon, bool) or not isinstance(lat, (int, float)) or not isinstance(lon, (int, float)):
        raise ParseError(f"element {el.get('id')} has non-numeric coordinates")
    try:
        return GeoPoint(lat, lon)
    except InvalidCoordinate as exc:
        raise ParseError(f"element {el.get('id')}: {exc}") from None


def parse_overpass_response(body: bytes, keys: Sequence[str]) -> list[PoiEntity]:
    """Flatten an Overpass JSON answer into one entity per (element, key) match."""
    try:
        text = body.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"invalid UTF-8 ({exc.reason})", offset=exc.start) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", offset=_byte_offset(text, exc.pos)) from None
    except RecursionError:
        raise ParseError("JSON nesting too deep") from None
    if not isinstance(doc, dict):
        raise ParseError("top-level JSON value is not an object")
    elements = doc.get("elements")
    if not isinstance(elements, list):
        raise ParseError("missing 'elements' array")

    out = []
    for i, el in enumerate(elements):
        if not isinstance(el, dict):
            raise ParseError(f"element #{i} is not an object")
        if "id" not in el:
            raise MissingField(f"element #{i} lacks 'id'")
        osm_id = el["id"]
        if isinstance(osm_id, bool) or not isinstance(osm_id, int):
            raise ParseError(f"element #{i} has non-integer id {osm_id!r}")
        tags = el.get("tags") or {}
        if not isinstance(tags, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in tags.items()
        ):
            raise ParseError(f"element {osm_id} has malformed tags")
        kind = el.get("type", "node")
        if not isinstance(kind, str):
            raise ParseError(f"element {osm_id} has malformed type")
        matched = [k for k in keys if k in tags]
        if not matched:
            continue
        center = _element_center(el)
        for key in matched:
            out.append(PoiEntity(osm_id, key, tags[key], dict(tags), center, kind))
    return out


class RateLimiter:
    """Serialises dispatch so consecutive requests are spaced by ``interval`` seconds."""

    def __init__(self, interval: float, clock=time.monotonic, sleep=time.sleep):
        self.interval = interval
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._last = None

    def wait(self):
        with self._lock:
            now = self._clock()
            if self._last is not None:
                remaining = self._last + self.interval - now
                if remaining > 0:
                    self._sleep(remaining)
                    now = self._clock()
            self._last = now


_limiters: dict = {}
_limiters_lock = threading.Lock()


def shared_limiter(endpoint: str, interval: float) -> RateLimiter:
    with _limiters_lock:
        lim = _limiters.get(endpoint)
        if lim is None:
            lim = _limiters[endpoint] = RateLimiter(interval)
        lim.interval = max(lim.interval, interval)
        return lim


def request_digest(p: GeoPoint, cfg: GscQueryConfig) -> str:
    payload = {
        "lat": p.lat,
        "lon": p.lon,
        "side_m": float(cfg.side_m),
        "keys": list(cfg.feature_keys),
        "endpoint": cfg.effective_endpoint,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _atomic_write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _post(endpoint: str, query: str, timeout: float, session) -> tuple[int, bytes]:
    import requests

    sess = session if session is not None else requests
    try:
        resp = sess.post(endpoint, data={"data": query}, timeout=timeout)
    except requests.RequestException as exc:
        raise NetworkError(f"request to {endpoint} failed: {exc}") from exc
    return resp.status_code, resp.content


def fetch_pois(
    p: GeoPoint,
    cfg: GscQueryConfig,
    *,
    session=None,
    refresh: bool = False,
    limiter: Optional[RateLimiter] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> list[PoiEntity]:
    """Return POIs around ``p``, replaying from ``cfg.cache_dir`` when possible."""
    digest = request_digest(p, cfg)
    cache_body = cache_meta = None
    if cfg.cache_dir is not None:
        cache_body = cfg.cache_dir / f"{digest}.json"
        cache_meta = cfg.cache_dir / f"{digest}.meta"
        if cache_body.exists() and not refresh:
            try:
                return parse_overpass_response(cache_body.read_bytes(), cfg.feature_keys)
            except ParseError as exc:
                raise ParseError(f"cached response unreadable: {exc}", path=str(cache_body)) from None

    endpoint = cfg.effective_endpoint
    box = bbox_from_center(p, cfg.side_m)
    query = build_overpass_query(box, cfg.feature_keys, cfg.timeout_s)
    limiter = limiter or shared_limiter(endpoint, cfg.min_request_interval_s)

    body = None
    last_error = None
    rate_limited = False
    for attempt in range(cfg.max_retries + 1):
        if attempt:
            sleep(cfg.backoff_s * 2 ** (attempt - 1))
        limiter.wait()
        try:
            status, content = _post(endpoint, query, cfg.timeout_s, session)
        except NetworkError as exc:
            last_error, rate_limited = str(exc), False
            log.warning("attempt %d/%d: %s", attempt + 1, cfg.max_retries + 1, exc)
            continue
        if status == 200:
            body = content
            break
        rate_limited = status in (429, 504)
        last_error = f"HTTP {status} from {endpoint}"
        log.warning("attempt %d/%d: %s", attempt + 1, cfg.max_retries + 1, last_error)
        if not rate_limited and 400 <= status < 500:
            break  # the query itself is bad; retrying will not help
    if body is None:
        if rate_limited:
            raise RateLimited(f"rate limited after {cfg.max_retries + 1} attempts: {last_error}")
        raise NetworkError(f"giving up after retries: {last_error}")

    if cache_body is not None:
        _atomic_write(cache_body, body)
        meta = {
            "lat": p.lat,
            "lon": p.lon,
            "side_m": float(cfg.side_m),
            "keys": list(cfg.feature_keys),
            "endpoint": endpoint,
            "bbox": [box.south, box.west, box.north, box.east],
            "fetched_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        _atomic_write(cache_meta, json.dumps(meta, indent=2).encode())
    return parse_overpass_response(body, cfg.feature_keys)
