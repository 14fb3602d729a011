"""Turn a :class:`Case` into finite-element models and a coupling problem."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from glic.coupling.engine import CouplingProblem
from glic.coupling.interface import InterfaceMap, PatchMap
from glic.errors import CaseValidationError, InvalidInputError
from glic.fem.mesh import Mesh, rectangular_grid, remove_disk
from glic.fem.model import DirichletBC, FeModel

MATCH_TOL = 1e-9


@dataclass
class PatchGeometry:
    """Everything derived for one patch region."""

    spec: object
    global_elements: np.ndarray
    interface_nodes: np.ndarray  # global node ids, sorted
    mesh: Mesh
    node_of_global: dict  # global interface node -> patch node
    ties: list  # (dependent patch node, [(master patch node, weight), ...])
    global_mesh: Mesh
    global_patch_nodes: np.ndarray  # global ids of the global-patch mesh nodes


@dataclass
class BuiltCase:
    case: object
    global_mesh: Mesh
    complement_elements: np.ndarray
    patches: list
    problem: CouplingProblem

    @property
    def interface_nodes(self):
        return np.concatenate([p.interface_nodes for p in self.patches])


# ---------------------------------------------------------------- helpers
def _match(coords, targets, tol=MATCH_TOL):
    """Index into ``targets`` of the point matching each of ``coords``."""
    if len(coords) == 0:
        return np.zeros(0, dtype=np.int64)
    dist, idx = cKDTree(targets).query(coords)
    if np.any(dist > tol):
        return None
    return idx.astype(np.int64)


def _amplitude(case, scale):
    return lambda t: scale * case.amplitude(t)


def _dirichlet(case, nodes):
    """Boundary conditions of the case applied to a set of node coordinates."""
    bcs = {}
    for spec in case.boundary_conditions:
        for n in spec.nodes.select(nodes):
            dof = 2 * int(n) + spec.component
            if dof in bcs:
                continue
            bcs[dof] = DirichletBC(int(n), spec.component, _amplitude(case, spec.value))
    return [bcs[d] for d in sorted(bcs)]


def _loads(case, nodes):
    loads = []
    for spec in case.loads:
        for n in spec.nodes.select(nodes):
            loads.append((2 * int(n) + spec.component, _amplitude(case, spec.force)))
    return loads


def _check_alignment(case):
    grid = case.grid
    (x0, y0), (w, h) = grid.origin, grid.size
    dx, dy = grid.spacing
    problems = []
    for spec in case.patches:
        xmin, xmax, ymin, ymax = spec.region
        if not (xmin < xmax and ymin < ymax):
            problems.append(f"{spec.name}: empty region")
            continue
        if xmin < x0 - MATCH_TOL or xmax > x0 + w + MATCH_TOL or ymin < y0 - MATCH_TOL or ymax > y0 + h + MATCH_TOL:
            problems.append(f"{spec.name}: region extends beyond the global model")
        for label, v, o, d in (("left", xmin, x0, dx), ("right", xmax, x0, dx),
                               ("bottom", ymin, y0, dy), ("top", ymax, y0, dy)):
            k = (v - o) / d
            if abs(v - (o + round(k) * d)) > MATCH_TOL:
                axis = "x" if label in ("left", "right") else "y"
                lo, hi = o + np.floor(k) * d, o + np.ceil(k) * d
                problems.append(
                    f"{spec.name}: {label} facet {axis}={v:g} cuts global elements "
                    f"(nearest facets {axis}={lo:g} and {axis}={hi:g})"
                )
    if problems:
        raise CaseValidationError("misaligned patch region(s):\n  " + "\n  ".join(problems))


def _interface_edges(mesh, patch_set, complement_set):
    """Global element edges shared by a patch element and a complement element."""
    owner = {}
    for e, conn in enumerate(mesh.elements):
        for k in range(4):
            a, b = int(conn[k]), int(conn[(k + 1) % 4])
            owner.setdefault((min(a, b), max(a, b)), []).append(e)
    edges = []
    for key, els in sorted(owner.items()):
        if len(els) == 2:
            e1, e2 = els
            if (e1 in patch_set and e2 in complement_set) or (e2 in patch_set and e1 in complement_set):
                edges.append(key)
    return edges


def _hanging_ties(patch_mesh, edges, global_nodes, node_of_global):
    """Tie refined nodes lying inside coarse interface edges to the edge ends."""
    pts = patch_mesh.nodes
    masters = set(node_of_global.values())
    ties = []
    for a, b in edges:
        pa, pb = global_nodes[a], global_nodes[b]
        d = pb - pa
        L2 = float(d @ d)
        rel = pts - pa
        xi = rel @ d / L2
        off = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]) / np.sqrt(L2)
        on = np.nonzero((off <= MATCH_TOL) & (xi > MATCH_TOL) & (xi < 1 - MATCH_TOL))[0]
        for n in on:
            if int(n) in masters:
                continue
            ties.append((int(n), [(node_of_global[a], 1.0 - xi[n]), (node_of_global[b], float(xi[n]))]))
    ties.sort()
    return ties


def _dof_ties(node_ties):
    out = []
    for n, ms in node_ties:
        for c in (0, 1):
            out.append((2 * n + c, [(2 * m + c, w) for m, w in ms]))
    return out


# ------------------------------------------------------------------ build
def patch_geometry(case):
    """Global mesh, complement elements and per-patch geometry of a case."""
    _check_alignment(case)
    grid = case.grid
    gmesh = rectangular_grid(grid.origin[0], grid.origin[1], grid.size[0], grid.size[1], *grid.elements)
    cent = gmesh.element_centroids()
    owner = np.full(gmesh.n_elements, -1, dtype=np.int64)
    for s, spec in enumerate(case.patches):
        xmin, xmax, ymin, ymax = spec.region
        inside = (cent[:, 0] > xmin) & (cent[:, 0] < xmax) & (cent[:, 1] > ymin) & (cent[:, 1] < ymax)
        if np.any(owner[inside] >= 0):
            raise CaseValidationError(f"{spec.name} overlaps another patch")
        owner[inside] = s
    complement = np.nonzero(owner < 0)[0]
    if complement.size == 0:
        raise CaseValidationError("patches cover the whole global model; nothing to couple")
    comp_nodes = set(np.unique(gmesh.elements[complement]).tolist())
    node_owner = {}
    for s in range(len(case.patches)):
        for n in np.unique(gmesh.elements[owner == s]).tolist():
            if node_owner.setdefault(n, s) != s:
                raise CaseValidationError(
                    f"{case.patches[s].name} touches {case.patches[node_owner[n]].name}; "
                    "patches must be separated by complement elements"
                )

    patches = []
    for s, spec in enumerate(case.patches):
        els = np.nonzero(owner == s)[0]
        nodes = np.unique(gmesh.elements[els])
        iface = np.array(sorted(set(nodes.tolist()) & comp_nodes), dtype=np.int64)
        if iface.size == 0:
            raise CaseValidationError(f"{spec.name}: no interface with the complement")
        xmin, xmax, ymin, ymax = spec.region
        nx = int(round((xmax - xmin) / grid.spacing[0])) * spec.refinement
        ny = int(round((ymax - ymin) / grid.spacing[1])) * spec.refinement
        pmesh = rectangular_grid(xmin, ymin, xmax - xmin, ymax - ymin, nx, ny)
        if spec.hole is not None:
            pmesh = remove_disk(pmesh, spec.hole.center, spec.hole.radius)
        idx = _match(gmesh.nodes[iface], pmesh.nodes)
        if idx is None:
            raise CaseValidationError(f"{spec.name}: hole removes interface nodes")
        node_of_global = dict(zip(iface.tolist(), idx.tolist()))
        edges = _interface_edges(gmesh, set(els.tolist()), set(complement.tolist()))
        ties = _hanging_ties(pmesh, edges, gmesh.nodes, node_of_global)
        pmesh.element_sets["patch"] = np.arange(pmesh.n_elements)
        gp_mesh, gp_nodes = gmesh.submesh(els)
        gp_mesh.element_sets["patch"] = np.arange(gp_mesh.n_elements)
        patches.append(PatchGeometry(spec, els, iface, pmesh, node_of_global, ties, gp_mesh, gp_nodes))

    region_nodes = set()
    for s in range(len(case.patches)):
        region_nodes |= set(np.unique(gmesh.elements[owner == s]).tolist())
    for spec in case.loads:
        hit = sorted(set(spec.nodes.select(gmesh.nodes).tolist()) & region_nodes)
        if hit:
            raise CaseValidationError(
                f"load on nodes {spec.nodes.describe()} touches patch region nodes {hit[:10]}"
            )
    return gmesh, complement, patches


def _interface_dofs(nodes, bcs):
    """DOFs of ``nodes`` (both components) not prescribed by boundary conditions."""
    presc = {bc.dof for bc in bcs}
    return [2 * int(n) + c for n in nodes for c in (0, 1) if 2 * int(n) + c not in presc]


def build_case(case):
    """Global model, patches, interface map and coupling problem of a case."""
    gmesh, complement, geoms = patch_geometry(case)
    gmat = case.materials[case.grid.material]
    newton = case.newton
    t = case.grid.thickness
    try:
        g_bcs = _dirichlet(case, gmesh.nodes)
        global_dofs, patch_maps, patch_models, gp_models = [], [], [], []
        offset = 0
        for s, geo in enumerate(geoms):
            gdofs = _interface_dofs(geo.interface_nodes, g_bcs)
            global_dofs += gdofs

            p_bcs = _dirichlet(case, geo.mesh.nodes)
            pdofs = [2 * geo.node_of_global[d // 2] + d % 2 for d in gdofs]
            presc = {bc.dof for bc in p_bcs}
            if presc & set(pdofs):
                raise CaseValidationError(f"{geo.spec.name}: boundary conditions differ from the global model")
            patch = FeModel(
                geo.mesh,
                {"patch": case.materials[geo.spec.material]},
                thickness=t,
                dirichlet=p_bcs,
                ties=_dof_ties(geo.ties),
                interface_dofs=pdofs,
                controls=newton,
                name=geo.spec.name,
            )
            gp_index = {int(n): i for i, n in enumerate(geo.global_patch_nodes)}
            gpdofs = [2 * gp_index[d // 2] + d % 2 for d in gdofs]
            gp = FeModel(
                geo.global_mesh,
                {"patch": gmat},
                thickness=t,
                dirichlet=_dirichlet(case, geo.global_mesh.nodes),
                interface_dofs=gpdofs,
                controls=newton,
                name=f"global_{geo.spec.name}",
            )
            n = len(gdofs)
            patch_maps.append(PatchMap(np.array(pdofs), np.arange(offset, offset + n), np.array(gpdofs)))
            offset += n
            patch_models.append(patch)
            gp_models.append(gp)

        gmodel = FeModel(
            gmesh, gmat, thickness=t, dirichlet=g_bcs, loads=_loads(case, gmesh.nodes),
            controls=newton, name="global",
        )
        maps = InterfaceMap(np.array(global_dofs, dtype=np.int64), patch_maps)
        problem = CouplingProblem(
            gmodel,
            patch_models,
            maps,
            complement,
            controls=case.controls,
            policy=case.policy,
            strategy=case.strategy,
            global_patches=gp_models,
            n_steps=case.steps,
        )
    except InvalidInputError as exc:
        if isinstance(exc, CaseValidationError):
            raise
        raise CaseValidationError(f"{case.name}: {exc}") from None
    return BuiltCase(case, gmesh, complement, geoms, problem)


def monolithic_model(built):
    """Complement elements and refined patches merged on the interface nodes.

    Returns the model and the map from global node ids (complement side) to
    reference node ids.
    """
    case = built.case
    gmesh = built.global_mesh
    comp_mesh, comp_nodes = gmesh.submesh(built.complement_elements)
    ref_of_global = {int(g): i for i, g in enumerate(comp_nodes)}
    nodes = [comp_mesh.nodes]
    elements = [comp_mesh.elements]
    sets = {"complement": np.arange(comp_mesh.n_elements)}
    materials = {"complement": case.materials[case.grid.material]}
    ties = []
    n_total = comp_mesh.n_nodes
    e_total = comp_mesh.n_elements
    for geo in built.patches:
        pm = geo.mesh
        new_id = np.full(pm.n_nodes, -1, dtype=np.int64)
        for g, pn in geo.node_of_global.items():
            new_id[pn] = ref_of_global[g]
        fresh = np.nonzero(new_id < 0)[0]
        new_id[fresh] = n_total + np.arange(len(fresh))
        n_total += len(fresh)
        nodes.append(pm.nodes[fresh])
        elements.append(new_id[pm.elements])
        name = geo.spec.name
        sets[name] = e_total + np.arange(pm.n_elements)
        e_total += pm.n_elements
        materials[name] = case.materials[geo.spec.material]
        ties += [(int(new_id[n]), [(int(new_id[m]), w) for m, w in ms]) for n, ms in geo.ties]
    mesh = Mesh(np.vstack(nodes), np.vstack(elements), element_sets=sets)
    expected = comp_mesh.n_nodes + sum(g.mesh.n_nodes - len(g.interface_nodes) for g in built.patches)
    if mesh.n_nodes != expected:
        raise InvalidInputError("monolithic node count does not match complement + patches - interface")
    try:
        model = FeModel(
            mesh,
            materials,
            thickness=case.grid.thickness,
            dirichlet=_dirichlet(case, mesh.nodes),
            loads=_loads(case, mesh.nodes),
            ties=_dof_ties(ties),
            controls=case.newton,
            name="reference",
        )
    except InvalidInputError as exc:
        raise CaseValidationError(f"{case.name}: reference model: {exc}") from None
    return model, ref_of_global
