"""Numba kernels for the tumour analogue.

All state lives in flat numpy arrays owned by the caller.  Spatial lookups use
linked-list bins (``head[bin]`` / ``next[item]``) whose width is at least the
largest interaction range, so a 3x3 bin neighbourhood is always enough.
"""

import math

import numpy as np
from numba import njit

from ..nk_core import _draw_key, hashed_entry

# indices into the float parameter vector (see params.KERNEL_FIELDS)
DAMAGE = 0
REPAIR = 1
DRUG_DEATH = 2
ELASTIC = 3
CARGO_UPTAKE = 4
CARGO_APOPTOSIS = 5
CARGO_ADHESION = 6
CARGO_REPULSION = 7
RELEASE_O2 = 8
ADHESION_RANGE = 9
MAX_STRETCH = 10
ATTACH_MAX = 11
ATTACH_MIN = 12
SHUTDOWN = 13
RECEPTOR_MIN = 14
SPEED = 15
WORKER_UPTAKE = 16
DOMAIN = 17
VOXEL = 18
O2_BOUNDARY = 19
O2_DIFFUSION = 20
O2_DECAY = 21
CELL_UPTAKE = 22
CELL_RADIUS = 23
AGENT_RADIUS = 24
CELL_SPACING = 25
CYCLE_RATE = 26
O2_PROLIF_MIN = 27
O2_PROLIF_SAT = 28
APOPTOSIS = 29
NECROSIS_O2 = 30
NECROSIS = 31
CELL_REPULSION = 32
CELL_ADHESION = 33
AGENT_O2_COUPLING = 34
CORPSE_UPTAKE = 35

# per-type table columns
T_BIAS_ATTACHED = 0
T_BIAS_FREE = 1
T_ADHESION = 2
T_REPULSION = 3
T_PERSISTENCE = 4

# cargo states
FREE = 0
CARRIED = 1
DEPOSITED = 2
GONE = 3

SOR_OMEGA = 1.5
RETRY_PROGRESS = 0.9

# per-cell hash slots within one phenotype interval
SLOTS = 8
SLOT_DEATH, SLOT_DRUG, SLOT_ANGLE, SLOT_MOTHER, SLOT_DAUGHTER = 0, 1, 2, 3, 4


@njit(cache=True, inline="always")
def _cell_index(x, origin, width, n):
    i = int(math.floor((x - origin) / width))
    if i < 0:
        return 0
    if i >= n:
        return n - 1
    return i


@njit(cache=True)
def build_coefficients(coef, P, cpos, calive, n_cells, wpos, gstate, gpos):
    """coef = a / (4a + decay + sink) per voxel, a = D / h^2.

    The sink is the summed uptake rate of everything in the voxel, weighted by
    the fraction of the voxel area it covers.
    """
    nx = coef.shape[0]
    h = P[VOXEL]
    org = -0.5 * P[DOMAIN]
    area = h * h
    coef[:, :] = 0.0
    cell_u = P[CELL_UPTAKE] * math.pi * P[CELL_RADIUS] ** 2 / area
    dead_u = P[CORPSE_UPTAKE] * cell_u
    for i in range(n_cells):
        u = cell_u if calive[i] else dead_u
        if u > 0.0:
            coef[_cell_index(cpos[i, 0], org, h, nx), _cell_index(cpos[i, 1], org, h, nx)] += u
    coupling = P[AGENT_O2_COUPLING]
    if coupling > 0.0:
        agent_area = math.pi * P[AGENT_RADIUS] ** 2 / area
        wu = coupling * P[WORKER_UPTAKE] * agent_area
        gu = coupling * P[CARGO_UPTAKE] * agent_area
        for i in range(wpos.shape[0]):
            coef[_cell_index(wpos[i, 0], org, h, nx), _cell_index(wpos[i, 1], org, h, nx)] += wu
        for i in range(gpos.shape[0]):
            if gstate[i] != GONE:
                coef[_cell_index(gpos[i, 0], org, h, nx), _cell_index(gpos[i, 1], org, h, nx)] += gu
    a = P[O2_DIFFUSION] / area
    base = 4.0 * a + P[O2_DECAY]
    for i in range(nx):
        for j in range(nx):
            coef[i, j] = a / (base + coef[i, j])


@njit(cache=True)
def relax_oxygen(o2p, coef, B, sweeps, tol):
    """Red-black SOR sweeps for the quasi-steady field  D lap(c) = (decay + sink) c.

    ``o2p`` is padded by one ghost voxel on each side holding the Dirichlet
    wall value.  Values are clamped to [0, B].  Stops after ``sweeps`` sweeps
    or, when ``tol`` > 0, once the largest update is below it; returns the
    sweeps done.
    """
    nx = coef.shape[0]
    ny = coef.shape[1]
    for s in range(sweeps):
        biggest = 0.0
        for colour in range(2):
            for i in range(1, nx + 1):
                for j in range(1 + ((i + colour) & 1), ny + 1, 2):
                    old = o2p[i, j]
                    t = coef[i - 1, j - 1] * (o2p[i - 1, j] + o2p[i + 1, j] + o2p[i, j - 1] + o2p[i, j + 1])
                    new = min(max(old + SOR_OMEGA * (t - old), 0.0), B)
                    o2p[i, j] = new
                    if tol > 0.0:
                        biggest = max(biggest, abs(new - old))
        if tol > 0.0 and biggest < tol:
            return s + 1
    return sweeps


def pad_field(o2, B):
    out = np.full((o2.shape[0] + 2, o2.shape[1] + 2), B)
    out[1:-1, 1:-1] = o2
    return out


@njit(cache=True, inline="always")
def _o2_and_gradient(o2p, x, y, P):
    nx = o2p.shape[0] - 2
    h = P[VOXEL]
    org = -0.5 * P[DOMAIN]
    i = _cell_index(x, org, h, nx) + 1
    j = _cell_index(y, org, h, nx) + 1
    return (
        o2p[i, j],
        (o2p[i + 1, j] - o2p[i - 1, j]) / (2.0 * h),
        (o2p[i, j + 1] - o2p[i, j - 1]) / (2.0 * h),
    )


@njit(cache=True)
def rebuild_cell_bins(head, nxt, cpos, calive, n_cells, org, bw, nb):
    head[:] = -1
    for i in range(n_cells):
        if calive[i]:
            b = _cell_index(cpos[i, 0], org, bw, nb) * nb + _cell_index(cpos[i, 1], org, bw, nb)
            nxt[i] = head[b]
            head[b] = i


@njit(cache=True)
def rebuild_cargo_bins(head, nxt, gpos, gstate, wanted, org, bw, nb):
    head[:] = -1
    for i in range(gpos.shape[0]):
        if gstate[i] == wanted:
            b = _cell_index(gpos[i, 0], org, bw, nb) * nb + _cell_index(gpos[i, 1], org, bw, nb)
            nxt[i] = head[b]
            head[b] = i


@njit(cache=True, inline="always")
def _cell_forces(x, y, cpos, calive, chead, cnext, org, bw, nb, R, R_adh, rep, adh):
    """Velocity on an agent at (x, y) from nearby live cells (cells are not pushed back)."""
    vx = 0.0
    vy = 0.0
    if rep == 0.0 and adh == 0.0:
        return vx, vy
    bi = _cell_index(x, org, bw, nb)
    bj = _cell_index(y, org, bw, nb)
    for ii in range(max(bi - 1, 0), min(bi + 2, nb)):
        for jj in range(max(bj - 1, 0), min(bj + 2, nb)):
            c = chead[ii * nb + jj]
            while c >= 0:
                dx = x - cpos[c, 0]
                dy = y - cpos[c, 1]
                d2 = dx * dx + dy * dy
                if d2 < R_adh * R_adh and d2 > 1e-18:
                    d = math.sqrt(d2)
                    f = 0.0
                    if d < R:
                        q = 1.0 - d / R
                        f = rep * q * q
                    q = 1.0 - d / R_adh
                    f -= adh * q * q
                    vx += f * dx / d
                    vy += f * dy / d
                c = cnext[c]
    return vx, vy


@njit(cache=True)
def move_agents(dt, P, types, cpos, calive, chead, cnext, wpos, wtype, wcargo, wdir,
                gpos, gstate, o2, rng, org, bw, nb):
    """Motility and forces for every worker (index order).  Returns True if a
    carried cargo broke loose (free-cargo bins are then stale)."""
    R = P[CELL_RADIUS] + P[AGENT_RADIUS]
    R_adh = R * P[ADHESION_RANGE]
    speed = P[SPEED]
    rest = P[ATTACH_MIN]
    cap = P[AGENT_RADIUS]
    half = 0.5 * P[DOMAIN] - P[AGENT_RADIUS]
    broke = False
    for w in range(wpos.shape[0]):
        t = wtype[w]
        # persistent random direction
        pers = types[t, T_PERSISTENCE]
        if pers <= dt or rng.random() < dt / pers:
            th = 2.0 * math.pi * rng.random()
            wdir[w, 0] = math.cos(th)
            wdir[w, 1] = math.sin(th)
        x = wpos[w, 0]
        y = wpos[w, 1]
        g = wcargo[w]
        _, gx, gy = _o2_and_gradient(o2, x, y, P)
        gn = math.sqrt(gx * gx + gy * gy)
        if g >= 0:
            b = types[t, T_BIAS_ATTACHED]
            sign = -1.0
        else:
            b = types[t, T_BIAS_FREE]
            sign = 1.0
        dx = (1.0 - b) * wdir[w, 0]
        dy = (1.0 - b) * wdir[w, 1]
        if gn >= P[SHUTDOWN] and gn > 0.0:
            dx += b * sign * gx / gn
            dy += b * sign * gy / gn
        dn = math.sqrt(dx * dx + dy * dy)
        vx = 0.0
        vy = 0.0
        if dn > 1e-12:
            vx = speed * dx / dn
            vy = speed * dy / dn
        fx, fy = _cell_forces(
            x, y, cpos, calive, chead, cnext, org, bw, nb, R, R_adh,
            P[CELL_REPULSION] * math.sqrt(types[t, T_REPULSION]),
            P[CELL_ADHESION] * math.sqrt(types[t, T_ADHESION]),
        )
        vx += fx
        vy += fy
        if g >= 0:
            sx = gpos[g, 0] - x
            sy = gpos[g, 1] - y
            d = math.sqrt(sx * sx + sy * sy)
            stretch = d - rest
            if stretch > P[MAX_STRETCH]:
                wcargo[w] = -1
                gstate[g] = FREE
                broke = True
            elif d > 1e-9:
                k = P[ELASTIC] * stretch / d
                vx += k * sx
                vy += k * sy
                mx = -k * sx * dt
                my = -k * sy * dt
                m = math.sqrt(mx * mx + my * my)
                if m > cap:
                    mx *= cap / m
                    my *= cap / m
                gpos[g, 0] = min(max(gpos[g, 0] + mx, -half), half)
                gpos[g, 1] = min(max(gpos[g, 1] + my, -half), half)
        mx = vx * dt
        my = vy * dt
        m = math.sqrt(mx * mx + my * my)
        if m > cap:
            mx *= cap / m
            my *= cap / m
        wpos[w, 0] = min(max(x + mx, -half), half)
        wpos[w, 1] = min(max(y + my, -half), half)
    return broke


@njit(cache=True)
def attach_and_release(P, wpos, wcargo, gpos, gstate, grec, fhead, fnext, o2, org, bw, nb):
    """Release carried cargo in hypoxia, then let free workers grab the nearest
    eligible cargo inside the attachment window.  Returns True if free-cargo
    membership changed."""
    changed = False
    lo2 = P[ATTACH_MIN] ** 2
    hi2 = P[ATTACH_MAX] ** 2
    rmin = P[RECEPTOR_MIN]
    for w in range(wpos.shape[0]):
        g = wcargo[w]
        if g >= 0:
            c, _, _ = _o2_and_gradient(o2, wpos[w, 0], wpos[w, 1], P)
            if c < P[RELEASE_O2]:
                gstate[g] = DEPOSITED
                grec[g] = 0.0
                wcargo[w] = -1
            continue
        x = wpos[w, 0]
        y = wpos[w, 1]
        bi = _cell_index(x, org, bw, nb)
        bj = _cell_index(y, org, bw, nb)
        best = -1
        best_d = math.inf
        for ii in range(max(bi - 1, 0), min(bi + 2, nb)):
            for jj in range(max(bj - 1, 0), min(bj + 2, nb)):
                c = fhead[ii * nb + jj]
                while c >= 0:
                    dx = gpos[c, 0] - x
                    dy = gpos[c, 1] - y
                    d2 = dx * dx + dy * dy
                    if d2 <= hi2 and d2 >= lo2 and gstate[c] == FREE and grec[c] >= rmin:
                        if d2 < best_d or (d2 == best_d and c < best):
                            best = c
                            best_d = d2
                    c = fnext[c]
        if best >= 0:
            wcargo[w] = best
            gstate[best] = CARRIED
            changed = True
    return changed


@njit(cache=True)
def push_free_cargo(dt, P, cpos, calive, chead, cnext, gpos, gstate, org, bw, nb):
    """Cells shove free cargo aside (cargo relative adhesion / repulsion)."""
    R = P[CELL_RADIUS] + P[AGENT_RADIUS]
    R_adh = R * P[ADHESION_RANGE]
    rep = P[CELL_REPULSION] * math.sqrt(P[CARGO_REPULSION])
    adh = P[CELL_ADHESION] * math.sqrt(P[CARGO_ADHESION])
    cap = P[AGENT_RADIUS]
    half = 0.5 * P[DOMAIN] - P[AGENT_RADIUS]
    moved = False
    for g in range(gpos.shape[0]):
        if gstate[g] != FREE:
            continue
        fx, fy = _cell_forces(gpos[g, 0], gpos[g, 1], cpos, calive, chead, cnext, org, bw, nb, R, R_adh, rep, adh)
        if fx != 0.0 or fy != 0.0:
            mx = fx * dt
            my = fy * dt
            m = math.sqrt(mx * mx + my * my)
            if m > cap:
                mx *= cap / m
                my *= cap / m
            gpos[g, 0] = min(max(gpos[g, 0] + mx, -half), half)
            gpos[g, 1] = min(max(gpos[g, 1] + my, -half), half)
            moved = True
    return moved


@njit(cache=True)
def cell_phenotype(span, P, cpos, cdmg, cprog, calive, counts, chead, cnext, contact, co2,
                   gpos, gstate, wcargo, o2, rng_cell, rng_agent, rng_drug, org, bw, nb):
    """Damage, death and division over one phenotype interval ``span``.

    Per-cell uniforms are counter-based: one 64-bit key per interval from
    the cell stream and one from the drug stream, hashed with the cell index
    and a slot number.  Stream consumption is therefore fixed per interval,
    and a cell's fate does not shift the draws of any other cell, which
    keeps paired runs (e.g. two drug rates, same seed) tightly coupled.
    Cargo apoptosis uses one agent-stream draw per live cargo.  The cell
    bins must list exactly the live cells on entry.
    """
    n = counts[0]
    nx = o2.shape[0] - 2
    inv_h = 1.0 / P[VOXEL]
    reach = (P[CELL_RADIUS] + P[AGENT_RADIUS]) * P[ADHESION_RANGE]
    reach2 = reach * reach

    # deposited-cargo contacts, searched from the (few) cargo side
    contact[:n] = 0
    for g in range(gpos.shape[0]):
        if gstate[g] != DEPOSITED:
            continue
        x = gpos[g, 0]
        y = gpos[g, 1]
        bi = _cell_index(x, org, bw, nb)
        bj = _cell_index(y, org, bw, nb)
        for ii in range(max(bi - 1, 0), min(bi + 2, nb)):
            for jj in range(max(bj - 1, 0), min(bj + 2, nb)):
                c = chead[ii * nb + jj]
                while c >= 0:
                    dx = x - cpos[c, 0]
                    dy = y - cpos[c, 1]
                    if dx * dx + dy * dy <= reach2:
                        contact[c] += 1
                    c = cnext[c]

    # damage, repair and death
    repair = P[REPAIR]
    gain1 = P[DAMAGE]
    decay = math.exp(-repair * span)
    p_drug = 1.0 - math.exp(-P[DRUG_DEATH] * span)
    p_apop = 1.0 - math.exp(-P[APOPTOSIS] * span)
    p_necro = 1.0 - math.exp(-(P[APOPTOSIS] + P[NECROSIS]) * span)
    necro_o2 = P[NECROSIS_O2]
    kcell = _draw_key(rng_cell)
    kdrug = _draw_key(rng_drug)
    for i in range(n):
        if not calive[i]:
            continue
        u = hashed_entry(kcell, SLOTS * i + SLOT_DEATH)
        vi = min(max(int((cpos[i, 0] - org) * inv_h), 0), nx - 1)
        vj = min(max(int((cpos[i, 1] - org) * inv_h), 0), nx - 1)
        c = o2[vi + 1, vj + 1]
        co2[i] = c
        m = contact[i]
        d = cdmg[i]
        if m > 0 or d > 0.0:
            gain = gain1 * m
            if repair > 0.0:
                ss = gain / repair
                d = ss + (d - ss) * decay
            else:
                d += gain * span
            cdmg[i] = max(d, 0.0)
        dead = d >= 1.0
        if m > 0 and hashed_entry(kdrug, SLOTS * i + SLOT_DRUG) < p_drug:
            dead = True
        if u < (p_necro if c < necro_o2 else p_apop):
            dead = True
        if dead:
            calive[i] = False

    # cargo decay
    p_gone = 1.0 - math.exp(-P[CARGO_APOPTOSIS] * span)
    for g in range(gpos.shape[0]):
        if gstate[g] != GONE and rng_agent.random() < p_gone:
            if gstate[g] == CARRIED:
                for w in range(wcargo.shape[0]):
                    if wcargo[w] == g:
                        wcargo[w] = -1
            gstate[g] = GONE

    # division into free space next to the mother
    rebuild_cell_bins(chead, cnext, cpos, calive, n, org, bw, nb)
    lo = P[O2_PROLIF_MIN]
    width = P[O2_PROLIF_SAT] - lo
    spacing = P[CELL_SPACING]
    min_sep2 = (0.9 * spacing) ** 2
    half = 0.5 * P[DOMAIN] - P[CELL_RADIUS]
    cap = cpos.shape[0]
    for i in range(n):
        if not calive[i]:
            continue
        frac = (co2[i] - lo) / width
        if frac > 1.0:
            frac = 1.0
        if frac > 0.0:
            cprog[i] += P[CYCLE_RATE] * frac * span
        if cprog[i] < 1.0 or counts[0] >= cap:
            continue
        th0 = 2.0 * math.pi * hashed_entry(kcell, SLOTS * i + SLOT_ANGLE)
        placed = False
        for k in range(6):
            th = th0 + k * math.pi / 3.0
            x = cpos[i, 0] + spacing * math.cos(th)
            y = cpos[i, 1] + spacing * math.sin(th)
            if abs(x) > half or abs(y) > half:
                continue
            bi = _cell_index(x, org, bw, nb)
            bj = _cell_index(y, org, bw, nb)
            free = True
            for ii in range(max(bi - 1, 0), min(bi + 2, nb)):
                for jj in range(max(bj - 1, 0), min(bj + 2, nb)):
                    q = chead[ii * nb + jj]
                    while q >= 0:
                        dx = cpos[q, 0] - x
                        dy = cpos[q, 1] - y
                        if dx * dx + dy * dy < min_sep2:
                            free = False
                            break
                        q = cnext[q]
                    if not free:
                        break
                if not free:
                    break
            if free:
                d = counts[0]
                counts[0] += 1
                cpos[d, 0] = x
                cpos[d, 1] = y
                cdmg[d] = cdmg[i]
                calive[d] = True
                cprog[i] = 0.1 * hashed_entry(kcell, SLOTS * i + SLOT_MOTHER)
                cprog[d] = 0.1 * hashed_entry(kcell, SLOTS * i + SLOT_DAUGHTER)
                b = bi * nb + bj
                cnext[d] = chead[b]
                chead[b] = d
                placed = True
                break
        if not placed:
            # contact inhibited: fall back into late G1 and try again later
            cprog[i] = RETRY_PROGRESS


@njit(cache=True)
def run_steps(n_steps, dt, pheno_every, sweeps, P, types, cpos, cdmg, cprog, calive, counts,
              wpos, wtype, wcargo, wdir, gpos, gstate, grec, o2, U,
              chead, cnext, contact, co2, fhead, fnext,
              rng_cell, rng_agent, rng_drug, bw, nb):
    """Advance ``n_steps`` steps.  counts = [n_cells, step_count]; ``o2`` is padded.

    Order within a step: oxygen, motility/forces, attachment/release,
    damage/death, division; the oxygen and cell stages only run on phenotype
    steps (every ``pheno_every`` steps).  Returns the number of steps taken;
    fewer than requested means the cell buffers must grow first.
    """
    org = -0.5 * P[DOMAIN]
    span = pheno_every * dt
    rebuild_cell_bins(chead, cnext, cpos, calive, counts[0], org, bw, nb)
    rebuild_cargo_bins(fhead, fnext, gpos, gstate, FREE, org, bw, nb)
    for s in range(n_steps):
        pheno = counts[1] % pheno_every == 0
        if pheno:
            alive = 0
            for i in range(counts[0]):
                if calive[i]:
                    alive += 1
            if counts[0] + alive > cpos.shape[0]:
                return s
            build_coefficients(U, P, cpos, calive, counts[0], wpos, gstate, gpos)
            relax_oxygen(o2, U, P[O2_BOUNDARY], sweeps, 0.0)
            if alive > 0 and push_free_cargo(span, P, cpos, calive, chead, cnext, gpos, gstate, org, bw, nb):
                rebuild_cargo_bins(fhead, fnext, gpos, gstate, FREE, org, bw, nb)
        if wpos.shape[0] > 0:
            if move_agents(dt, P, types, cpos, calive, chead, cnext, wpos, wtype, wcargo, wdir,
                           gpos, gstate, o2, rng_agent, org, bw, nb):
                rebuild_cargo_bins(fhead, fnext, gpos, gstate, FREE, org, bw, nb)
            if attach_and_release(P, wpos, wcargo, gpos, gstate, grec, fhead, fnext, o2, org, bw, nb):
                rebuild_cargo_bins(fhead, fnext, gpos, gstate, FREE, org, bw, nb)
        if pheno:
            cell_phenotype(span, P, cpos, cdmg, cprog, calive, counts, chead, cnext, contact, co2,
                           gpos, gstate, wcargo, o2, rng_cell, rng_agent, rng_drug, org, bw, nb)
            rebuild_cargo_bins(fhead, fnext, gpos, gstate, FREE, org, bw, nb)
        counts[1] += 1
    return n_steps
