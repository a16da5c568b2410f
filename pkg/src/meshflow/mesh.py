"""Triangle meshes, template construction, and surface sampling.

Vertices live in normalized coordinates (the unit box [-1, 1]^3 for all
shipped pipelines). Meshes are immutable values: every operation returns a
new mesh and connectivity never changes under deformation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import ConfigError, SamplingError, TopologyError

DEGENERATE_AREA_EPS = 1e-12

MAX_ICOSPHERE_SUBDIVISIONS = 7


def _as_vertex_array(vertices):
    # torch tensors pass through untouched so gradients survive; everything
    # else is coerced to a read-only float64 array.
    if type(vertices).__module__.startswith("torch"):
        return vertices
    v = np.ascontiguousarray(np.asarray(vertices, dtype=np.float64))
    if v.ndim != 2 or v.shape[1] != 3:
        raise TopologyError(f"vertices must have shape (V, 3), got {v.shape}")
    v.setflags(write=False)
    return v


@dataclass(eq=False)
class TriangleMesh:
    """A triangle mesh: vertex positions plus immutable connectivity.

    ``vertices`` is an (V, 3) float64 numpy array, or a torch tensor when
    the mesh is an intermediate value on a differentiation tape.
    ``faces`` is an (F, 3) int64 array of vertex indices.
    ``in_correspondence`` marks vertex-wise correspondence with a partner
    mesh (vertex i of this mesh matches vertex i of the partner).
    """

    vertices: np.ndarray
    faces: np.ndarray
    in_correspondence: bool = False
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.vertices = _as_vertex_array(self.vertices)
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if f.ndim != 2 or f.shape[1] != 3:
            raise TopologyError(f"faces must have shape (F, 3), got {f.shape}")
        if f.size:
            if f.min() < 0 or f.max() >= len(self.vertices):
                raise TopologyError("face index out of range")
            if (
                np.any(f[:, 0] == f[:, 1])
                or np.any(f[:, 1] == f[:, 2])
                or np.any(f[:, 0] == f[:, 2])
            ):
                raise TopologyError("a face repeats a vertex")
        f.setflags(write=False)
        self.faces = f

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def vertex_array(self) -> np.ndarray:
        """Vertices as a plain numpy array (detached if on a tape)."""
        v = self.vertices
        if isinstance(v, np.ndarray):
            return v
        return v.detach().cpu().numpy()

    def with_vertices(self, vertices, in_correspondence=None) -> "TriangleMesh":
        """New mesh with the same connectivity but different positions."""
        mesh = TriangleMesh(
            vertices,
            self.faces,
            self.in_correspondence if in_correspondence is None else in_correspondence,
        )
        mesh._cache = self._cache  # connectivity caches stay valid
        return mesh

    def connectivity_hash(self) -> str:
        """SHA-256 over (V, faces); invariant under any deformation."""
        h = hashlib.sha256()
        h.update(np.int64(self.n_vertices).tobytes())
        h.update(np.ascontiguousarray(self.faces).tobytes())
        return h.hexdigest()

    # -- connectivity derived data (cached; depends only on faces) --------

    @property
    def unique_edges(self) -> np.ndarray:
        """(E, 2) array of undirected edges, each sorted, lexicographic."""
        if "unique_edges" not in self._cache:
            e = np.concatenate(
                [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
            )
            e.sort(axis=1)
            self._cache["unique_edges"] = np.unique(e, axis=0)
        return self._cache["unique_edges"]

    @property
    def vertex_degrees(self) -> np.ndarray:
        if "degrees" not in self._cache:
            deg = np.zeros(self.n_vertices, dtype=np.int64)
            np.add.at(deg, self.unique_edges.ravel(), 1)
            self._cache["degrees"] = deg
        return self._cache["degrees"]

    @property
    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric vertex adjacency as a CSR matrix of ones."""
        if "adjacency" not in self._cache:
            e = self.unique_edges
            i = np.concatenate([e[:, 0], e[:, 1]])
            j = np.concatenate([e[:, 1], e[:, 0]])
            a = sparse.csr_matrix(
                (np.ones(len(i)), (i, j)), shape=(self.n_vertices, self.n_vertices)
            )
            self._cache["adjacency"] = a
        return self._cache["adjacency"]

    @property
    def edge_face_pairs(self) -> np.ndarray:
        """(E2, 2) face indices for every interior edge (exactly 2 faces)."""
        if "edge_face_pairs" not in self._cache:
            e = np.concatenate(
                [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
            )
            e.sort(axis=1)
            face_ids = np.tile(np.arange(self.n_faces, dtype=np.int64), 3)
            order = np.lexsort((e[:, 1], e[:, 0]))
            e_sorted = e[order]
            f_sorted = face_ids[order]
            same = np.all(e_sorted[1:] == e_sorted[:-1], axis=1)
            first = np.flatnonzero(same)
            pairs = np.stack([f_sorted[first], f_sorted[first + 1]], axis=1)
            self._cache["edge_face_pairs"] = pairs
        return self._cache["edge_face_pairs"]


def euler_characteristic(mesh: TriangleMesh) -> int:
    """V - E + F with E counted from unique undirected edges."""
    return mesh.n_vertices - len(mesh.unique_edges) + mesh.n_faces


# ---------------------------------------------------------------------------
# template construction


_ICO_T = (1.0 + np.sqrt(5.0)) / 2.0

_ICO_VERTS = np.array(
    [
        [-1, _ICO_T, 0], [1, _ICO_T, 0], [-1, -_ICO_T, 0], [1, -_ICO_T, 0],
        [0, -1, _ICO_T], [0, 1, _ICO_T], [0, -1, -_ICO_T], [0, 1, -_ICO_T],
        [_ICO_T, 0, -1], [_ICO_T, 0, 1], [-_ICO_T, 0, -1], [-_ICO_T, 0, 1],
    ],
    dtype=np.float64,
)

_ICO_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ],
    dtype=np.int64,
)


def _subdivide_once(vertices: np.ndarray, faces: np.ndarray):
    """Split every face in four; new vertices at edge midpoints."""
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    edges, inverse = np.unique(e, axis=0, return_inverse=True)
    midpoints = 0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]])
    new_vertices = np.concatenate([vertices, midpoints])

    nf = len(faces)
    m01 = len(vertices) + inverse[:nf]
    m12 = len(vertices) + inverse[nf : 2 * nf]
    m20 = len(vertices) + inverse[2 * nf :]
    v0, v1, v2 = faces[:, 0], faces[:, 1], faces[:, 2]
    new_faces = np.concatenate(
        [
            np.stack([v0, m01, m20], axis=1),
            np.stack([v1, m12, m01], axis=1),
            np.stack([v2, m20, m12], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ]
    )
    return new_vertices, new_faces


def make_icosphere(subdivisions: int, radius: float = 1.0) -> TriangleMesh:
    """Geodesic sphere: subdivided icosahedron projected onto the sphere.

    ``subdivisions = s`` gives 10 * 4**s + 2 vertices and 20 * 4**s faces.
    """
    if not isinstance(subdivisions, (int, np.integer)) or subdivisions < 0:
        raise ConfigError("subdivisions must be a non-negative integer")
    if subdivisions > MAX_ICOSPHERE_SUBDIVISIONS:
        raise ConfigError(
            f"subdivisions={subdivisions} exceeds the limit of "
            f"{MAX_ICOSPHERE_SUBDIVISIONS} ({10 * 4**subdivisions + 2} vertices)"
        )
    if not radius > 0:
        raise ConfigError("radius must be positive")

    vertices, faces = _ICO_VERTS.copy(), _ICO_FACES.copy()
    for _ in range(subdivisions):
        vertices, faces = _subdivide_once(vertices, faces)
    vertices *= radius / np.linalg.norm(vertices, axis=1, keepdims=True)
    return TriangleMesh(vertices, faces)


def laplacian_smooth(
    mesh: TriangleMesh, iterations: int, factor: float = 0.5
) -> TriangleMesh:
    """Umbrella smoothing: move each vertex toward its 1-ring mean.

    Each iteration applies v <- v + factor * (mean(neighbors) - v) with
    uniform weights. Connectivity is untouched.
    """
    if iterations < 0:
        raise ConfigError("iterations must be non-negative")
    if not 0.0 < factor <= 1.0:
        raise ConfigError("factor must lie in (0, 1]")
    if iterations == 0:
        return mesh

    deg = mesh.vertex_degrees
    if np.any(deg == 0):
        isolated = int(np.flatnonzero(deg == 0)[0])
        raise TopologyError(f"vertex {isolated} has an empty 1-ring")

    adj = mesh.adjacency
    inv_deg = 1.0 / deg
    v = mesh.vertex_array().copy()
    for _ in range(iterations):
        mean = (adj @ v) * inv_deg[:, None]
        v += factor * (mean - v)
    return mesh.with_vertices(v)


# ---------------------------------------------------------------------------
# geometry


def face_normals(mesh: TriangleMesh):
    """Unit outward normals per face.

    Returns ``(normals, degenerate)`` where ``normals`` is (F, 3) and
    ``degenerate`` flags faces with (near-)zero area; their normal rows are
    zero instead of raising.
    """
    v = mesh.vertex_array()
    a = v[mesh.faces[:, 0]]
    b = v[mesh.faces[:, 1]]
    c = v[mesh.faces[:, 2]]
    n = np.cross(b - a, c - a)
    norm = np.linalg.norm(n, axis=1)
    degenerate = norm <= DEGENERATE_AREA_EPS
    safe = np.where(degenerate, 1.0, norm)
    normals = n / safe[:, None]
    normals[degenerate] = 0.0
    return normals, degenerate


def face_areas(mesh: TriangleMesh) -> np.ndarray:
    v = mesh.vertex_array()
    a = v[mesh.faces[:, 0]]
    b = v[mesh.faces[:, 1]]
    c = v[mesh.faces[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def surface_area(mesh: TriangleMesh) -> float:
    return float(face_areas(mesh).sum())


# ---------------------------------------------------------------------------
# sampling


@dataclass(eq=False)
class PointCloud:
    """Points sampled from a surface, with optional source-face indices."""

    points: np.ndarray
    face_indices: np.ndarray | None = None

    def __post_init__(self):
        if not type(self.points).__module__.startswith("torch"):
            p = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
            if p.ndim != 2 or p.shape[1] != 3:
                raise SamplingError(f"points must have shape (N, 3), got {p.shape}")
            self.points = p
        if self.face_indices is not None:
            self.face_indices = np.asarray(self.face_indices, dtype=np.int64)

    def __len__(self):
        return len(self.points)

    def point_array(self) -> np.ndarray:
        p = self.points
        if isinstance(p, np.ndarray):
            return p
        return p.detach().cpu().numpy()


def draw_surface_samples(mesh: TriangleMesh, n: int, seed: int):
    """Draw (face index, barycentric weight) pairs for n surface points.

    Area-weighted face selection followed by uniform barycentric sampling;
    deterministic for a fixed seed. Returns ``(face_idx, weights)`` with
    ``weights`` of shape (n, 3), each row non-negative and summing to 1.
    """
    if n <= 0:
        raise SamplingError("sample count must be positive")
    areas = face_areas(mesh)
    total = areas.sum()
    if not total > DEGENERATE_AREA_EPS:
        raise SamplingError("cannot sample: all faces are degenerate")

    rng = np.random.default_rng(seed)
    face_idx = rng.choice(mesh.n_faces, size=n, p=areas / total)
    r1 = rng.random(n)
    r2 = rng.random(n)
    flip = r1 + r2 > 1.0
    r1[flip] = 1.0 - r1[flip]
    r2[flip] = 1.0 - r2[flip]
    weights = np.stack([1.0 - r1 - r2, r1, r2], axis=1)
    return face_idx, weights


def sample_surface(mesh: TriangleMesh, n: int, seed: int = 0) -> PointCloud:
    """Sample n points uniformly (by area) on the mesh surface."""
    face_idx, w = draw_surface_samples(mesh, n, seed)
    v = mesh.vertex_array()
    tri = v[mesh.faces[face_idx]]  # (n, 3 corners, 3)
    points = np.einsum("nc,ncd->nd", w, tri)
    return PointCloud(points, face_idx)
