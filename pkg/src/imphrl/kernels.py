"""Compiled inner loops shared by the simulator, the controller and the primitives.

All state is passed as flat float64 arrays (layouts below) and mutated in
place; the Python-facing modules copy before calling so that their own
functions stay pure.
"""

import math

import numpy as np
from numba import njit

# Object rows.
O_POS, O_YAW, O_VEL, O_HALF, O_KP, O_MASS, O_KIND, O_HOFF, O_HYAW = 0, 3, 4, 7, 10, 13, 14, 15, 18
NF_OBJ = 20
KIND_BOX, KIND_HANDLE = 0, 1

# Door vector.
DR_S, DR_SD, DR_PHI, DR_PHID, DR_BASE, DR_AXIS = 0, 1, 2, 3, 4, 7
DR_KS, DR_CS, DR_MS, DR_SMAX, DR_KPHI, DR_CPHI, DR_IPHI, DR_PHIMAX, DR_LEVER, DR_HFRIC = 9, 10, 11, 12, 13, 14, 15, 16, 17, 18
NF_DOOR = 20

# World vector (per-episode randomized constants).
W_TABLE_H, W_MU, W_BIN = 0, 1, 2  # bin: cx, cy, hx, hy, depth
NF_WORLD = 8

# Constants vector.
C_DT, C_M, C_IYAW, C_KT, C_CT, C_SLIP, C_EER, C_KO, C_CO, C_G, C_GRASP = 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10
C_WSLO, C_WSHI, C_YAWLIM, C_BANDLO, C_BANDHI, C_PAD = 11, 14, 17, 18, 19, 20
NF_CONST = 21

# Integer state: gripper closed flag, held object index (-1 none).
I_GRIP, I_HELD = 0, 1

# Telemetry vector.
T_FCMD, T_FCON, T_EPS, T_POW, T_NTAB, T_EXCESS, T_CLEARED, T_FMAG = 0, 4, 7, 11, 12, 13, 14, 15
NF_TEL = 16

# Trace columns.
TR_TIME, TR_POS, TR_YAW, TR_SET, TR_K, TR_D, TR_FCON, TR_POW = 0, 1, 4, 5, 9, 13, 17, 20
TR_FCMD, TR_EPS, TR_NTAB, TR_EXCESS, TR_FMAG, TR_VEL, TR_CLEARED = 21, 25, 29, 30, 31, 32, 35
NF_TRACE = 36


@njit(cache=True)
def wrap_angle(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@njit(cache=True)
def surface_height(x, y, W):
    h = W[W_TABLE_H]
    depth = W[W_BIN + 4]
    if depth > 0.0:
        if abs(x - W[W_BIN]) <= W[W_BIN + 2] and abs(y - W[W_BIN + 1]) <= W[W_BIN + 3]:
            h -= depth
    return h


@njit(cache=True)
def plane_contact(pen, vn, vx, vy, k, c, mu, slip, out):
    """Penalty normal + regularized Coulomb friction against a horizontal plane.

    ``vn`` is the separating normal velocity; damping acts only while the
    penetration deepens so the normal force never pulls.
    """
    out[0] = 0.0
    out[1] = 0.0
    out[2] = 0.0
    if pen <= 0.0:
        return 0.0
    n = k * pen + c * max(-vn, 0.0)
    speed = math.sqrt(vx * vx + vy * vy)
    if speed > 0.0:
        if speed >= slip:
            scale = mu * n / speed
        else:
            scale = mu * n / slip
        out[0] = -scale * vx
        out[1] = -scale * vy
    out[2] = n
    return n


@njit(cache=True)
def sphere_box(p, r, obj, out_n):
    """Penetration depth of a sphere into a yaw-rotated box; writes the
    world-frame contact normal (pointing from box to sphere) into out_n."""
    c = math.cos(obj[O_YAW])
    s = math.sin(obj[O_YAW])
    dx = p[0] - obj[O_POS]
    dy = p[1] - obj[O_POS + 1]
    dz = p[2] - obj[O_POS + 2]
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    lz = dz
    hx = obj[O_HALF]
    hy = obj[O_HALF + 1]
    hz = obj[O_HALF + 2]
    qx = min(max(lx, -hx), hx)
    qy = min(max(ly, -hy), hy)
    qz = min(max(lz, -hz), hz)
    ex = lx - qx
    ey = ly - qy
    ez = lz - qz
    dist = math.sqrt(ex * ex + ey * ey + ez * ez)
    if dist > 0.0:
        if dist >= r:
            return 0.0
        nx = ex / dist
        ny = ey / dist
        nz = ez / dist
        pen = r - dist
    else:
        # centre inside the box: exit through the nearest face
        gx = hx - abs(lx)
        gy = hy - abs(ly)
        gz = hz - abs(lz)
        nx = 0.0
        ny = 0.0
        nz = 0.0
        if gx <= gy and gx <= gz:
            nx = 1.0 if lx >= 0 else -1.0
            pen = r + gx
        elif gy <= gz:
            ny = 1.0 if ly >= 0 else -1.0
            pen = r + gy
        else:
            nz = 1.0 if lz >= 0 else -1.0
            pen = r + gz
    out_n[0] = c * nx - s * ny
    out_n[1] = s * nx + c * ny
    out_n[2] = nz
    return pen


@njit(cache=True)
def contacts(X, V, objs, W, C, IS, f_ee, f_obj, tmp):
    """Contact forces on the end-effector (f_ee, 3) and on every object
    (f_obj, n x 3; excludes gravity). Returns the table normal force on the ee."""
    f_ee[:] = 0.0
    f_obj[:, :] = 0.0
    r = C[C_EER]
    surf = surface_height(X[0], X[1], W)
    n_tab = plane_contact(surf + r - X[2], V[2], V[0], V[1], C[C_KT], C[C_CT], W[W_MU], C[C_SLIP], tmp)
    f_ee[0] += tmp[0]
    f_ee[1] += tmp[1]
    f_ee[2] += tmp[2]
    held = IS[I_HELD]
    nrm = np.empty(3)
    for j in range(objs.shape[0]):
        o = objs[j]
        if j != held:
            pen = sphere_box(X, r, o, nrm)
            if pen > 0.0:
                vrel = (V[0] - o[O_VEL]) * nrm[0] + (V[1] - o[O_VEL + 1]) * nrm[1] + (V[2] - o[O_VEL + 2]) * nrm[2]
                fn = C[C_KO] * pen + C[C_CO] * max(-vrel, 0.0)
                for a in range(3):
                    f_ee[a] += fn * nrm[a]
                    f_obj[j, a] -= fn * nrm[a]
        if o[O_KIND] == KIND_BOX and j != held:
            bsurf = surface_height(o[O_POS], o[O_POS + 1], W)
            bpen = bsurf - (o[O_POS + 2] - o[O_HALF + 2])
            plane_contact(bpen, o[O_VEL + 2], o[O_VEL], o[O_VEL + 1], C[C_KT], C[C_CT], W[W_MU], C[C_SLIP], tmp)
            f_obj[j, 0] += tmp[0]
            f_obj[j, 1] += tmp[1]
            f_obj[j, 2] += tmp[2]
    return n_tab


@njit(cache=True)
def attach_held(X, V, objs, IS):
    h = IS[I_HELD]
    if h < 0:
        return
    c = math.cos(X[3])
    s = math.sin(X[3])
    ox = objs[h, O_HOFF]
    oy = objs[h, O_HOFF + 1]
    objs[h, O_POS] = X[0] + c * ox - s * oy
    objs[h, O_POS + 1] = X[1] + s * ox + c * oy
    objs[h, O_POS + 2] = X[2] + objs[h, O_HOFF + 2]
    objs[h, O_YAW] = X[3] + objs[h, O_HYAW]
    objs[h, O_VEL] = V[0]
    objs[h, O_VEL + 1] = V[1]
    objs[h, O_VEL + 2] = V[2]


@njit(cache=True)
def try_grasp(X, objs, C, IS):
    """Close the gripper; attach the nearest object whose keypoint is within
    the grasp radius. Returns the attached index or -1."""
    IS[I_GRIP] = 1
    if IS[I_HELD] >= 0:
        return IS[I_HELD]
    best = -1
    best_d = C[C_GRASP]
    for j in range(objs.shape[0]):
        o = objs[j]
        if o[O_KIND] != KIND_BOX:
            continue
        c = math.cos(o[O_YAW])
        s = math.sin(o[O_YAW])
        kx = o[O_POS] + c * o[O_KP] - s * o[O_KP + 1]
        ky = o[O_POS + 1] + s * o[O_KP] + c * o[O_KP + 1]
        kz = o[O_POS + 2] + o[O_KP + 2]
        d = math.sqrt((X[0] - kx) ** 2 + (X[1] - ky) ** 2 + (X[2] - kz) ** 2)
        if d <= best_d:
            best_d = d
            best = j
    if best >= 0:
        o = objs[best]
        c = math.cos(X[3])
        s = math.sin(X[3])
        dx = o[O_POS] - X[0]
        dy = o[O_POS + 1] - X[1]
        o[O_HOFF] = c * dx + s * dy
        o[O_HOFF + 1] = -s * dx + c * dy
        o[O_HOFF + 2] = o[O_POS + 2] - X[2]
        o[O_HYAW] = o[O_YAW] - X[3]
        IS[I_HELD] = best
    return best


@njit(cache=True)
def release(IS):
    IS[I_GRIP] = 0
    IS[I_HELD] = -1


@njit(cache=True)
def clear_stains(x, y, grid, SM, pad):
    if grid.shape[0] == 0:
        return 0
    ox = SM[0]
    oy = SM[1]
    cell = SM[2]
    i0 = max(int(math.floor((x - pad - ox) / cell)), 0)
    i1 = min(int(math.floor((x + pad - ox) / cell)), grid.shape[0] - 1)
    j0 = max(int(math.floor((y - pad - oy) / cell)), 0)
    j1 = min(int(math.floor((y + pad - oy) / cell)), grid.shape[1] - 1)
    n = 0
    r2 = pad * pad
    for i in range(i0, i1 + 1):
        cx = ox + (i + 0.5) * cell
        for j in range(j0, j1 + 1):
            if grid[i, j]:
                cy = oy + (j + 0.5) * cell
                if (cx - x) ** 2 + (cy - y) ** 2 <= r2:
                    grid[i, j] = 0
                    n += 1
    return n


@njit(cache=True)
def tick(X, V, S, K, D, objs, door, W, C, grid, SM, IS, T, tel):
    """One semi-implicit Euler control tick of the impedance-controlled ee.

    Mutates X, V, objs, door, grid and T (time); writes telemetry into tel.
    """
    dt = C[C_DT]
    m = C[C_M]
    n_obj = objs.shape[0]
    f_ee = np.zeros(3)
    f_obj = np.zeros((n_obj, 3))
    tmp = np.zeros(3)
    for a in range(4):
        e = S[a] - X[a]
        if a == 3:
            e = wrap_angle(e)
        tel[T_EPS + a] = e
        tel[T_FCMD + a] = K[a] * e - D[a] * V[a]
    n_tab = contacts(X, V, objs, W, C, IS, f_ee, f_obj, tmp)
    for a in range(3):
        V[a] += dt * ((tel[T_FCMD + a] + f_ee[a]) / m)
    V[3] += dt * (tel[T_FCMD + 3] / C[C_IYAW])
    for a in range(4):
        X[a] += dt * V[a]
    finite = True
    for a in range(4):
        if not (math.isfinite(X[a]) and math.isfinite(V[a])):
            finite = False
    for a in range(3):
        lo = C[C_WSLO + a]
        hi = C[C_WSHI + a]
        if X[a] < lo:
            X[a] = lo
            V[a] = 0.0
        elif X[a] > hi:
            X[a] = hi
            V[a] = 0.0
    ylim = C[C_YAWLIM]
    if X[3] < -ylim:
        X[3] = -ylim
        V[3] = 0.0
    elif X[3] > ylim:
        X[3] = ylim
        V[3] = 0.0
    p = 0.0
    for a in range(4):
        p += tel[T_FCMD + a] * V[a]
    tel[T_POW] = abs(p)
    attach_held(X, V, objs, IS)
    # free objects and the door handle
    g = C[C_G]
    for j in range(n_obj):
        o = objs[j]
        if j == IS[I_HELD]:
            continue
        if o[O_KIND] == KIND_BOX:
            mass = o[O_MASS]
            o[O_VEL] += dt * (f_obj[j, 0] / mass)
            o[O_VEL + 1] += dt * (f_obj[j, 1] / mass)
            o[O_VEL + 2] += dt * (f_obj[j, 2] / mass - g)
            for a in range(3):
                o[O_POS + a] += dt * o[O_VEL + a]
                if not math.isfinite(o[O_POS + a]):
                    finite = False
        elif o[O_KIND] == KIND_HANDLE and door.shape[0] > 0:
            ax = door[DR_AXIS]
            ay = door[DR_AXIS + 1]
            fs = f_obj[j, 0] * ax + f_obj[j, 1] * ay
            sdd = (fs - door[DR_KS] * door[DR_S] - door[DR_CS] * door[DR_SD]) / door[DR_MS]
            door[DR_SD] += dt * sdd
            door[DR_S] += dt * door[DR_SD]
            if door[DR_S] < 0.0:
                door[DR_S] = 0.0
                door[DR_SD] = max(door[DR_SD], 0.0)
            elif door[DR_S] > door[DR_SMAX]:
                door[DR_S] = door[DR_SMAX]
                door[DR_SD] = min(door[DR_SD], 0.0)
            torque = door[DR_LEVER] * max(-f_obj[j, 2], 0.0) - door[DR_KPHI] * door[DR_PHI] - door[DR_CPHI] * door[DR_PHID]
            # hinge friction, viscous below 0.05 rad/s
            w = door[DR_PHID]
            hf = door[DR_HFRIC]
            if abs(w) >= 0.05:
                torque -= hf * (1.0 if w > 0 else -1.0)
            else:
                torque -= hf * w / 0.05
            door[DR_PHID] += dt * torque / door[DR_IPHI]
            door[DR_PHI] += dt * door[DR_PHID]
            if door[DR_PHI] < 0.0:
                door[DR_PHI] = 0.0
                door[DR_PHID] = max(door[DR_PHID], 0.0)
            elif door[DR_PHI] > door[DR_PHIMAX]:
                door[DR_PHI] = door[DR_PHIMAX]
                door[DR_PHID] = min(door[DR_PHID], 0.0)
            o[O_POS] = door[DR_BASE] + door[DR_S] * ax
            o[O_POS + 1] = door[DR_BASE + 1] + door[DR_S] * ay
            o[O_POS + 2] = door[DR_BASE + 2]
            o[O_VEL] = door[DR_SD] * ax
            o[O_VEL + 1] = door[DR_SD] * ay
            o[O_VEL + 2] = 0.0
    tel[T_FCON] = f_ee[0]
    tel[T_FCON + 1] = f_ee[1]
    tel[T_FCON + 2] = f_ee[2]
    tel[T_FMAG] = math.sqrt(f_ee[0] ** 2 + f_ee[1] ** 2 + f_ee[2] ** 2)
    tel[T_NTAB] = n_tab
    tel[T_EXCESS] = max(n_tab - C[C_BANDHI], 0.0)
    cleared = 0
    if n_tab >= C[C_BANDLO] and n_tab <= C[C_BANDHI]:
        cleared = clear_stains(X[0], X[1], grid, SM, C[C_PAD])
    tel[T_CLEARED] = cleared
    T[0] += dt
    return finite


@njit(cache=True)
def interpolate(S, target, max_step, max_yaw_step):
    """Move S toward target by at most max_step (translation); yaw moves
    proportionally and is separately capped by max_yaw_step."""
    dx = target[0] - S[0]
    dy = target[1] - S[1]
    dz = target[2] - S[2]
    dyaw = wrap_angle(target[3] - S[3])
    dist = math.sqrt(dx * dx + dy * dy + dz * dz)
    frac = 1.0
    if dist > max_step * (1.0 + 1e-9):
        frac = max_step / dist
    if abs(dyaw) * frac > max_yaw_step * (1.0 + 1e-9):
        frac = max_yaw_step / abs(dyaw)
    if frac >= 1.0:
        for a in range(4):
            S[a] = target[a]
        return True
    S[0] += frac * dx
    S[1] += frac * dy
    S[2] += frac * dz
    S[3] = wrap_angle(S[3] + frac * dyaw)
    return False


@njit(cache=True)
def adapt(K, eps, drive, beta, gamma_e, kmin, kmax, dt):
    """Explicit Euler step of dK/dt = beta*|eps| - gamma_e*drive, then clamp."""
    for a in range(4):
        k = K[a] + dt * (beta * abs(eps[a]) - gamma_e * drive)
        if k < kmin[a]:
            k = kmin[a]
        elif k > kmax[a]:
            k = kmax[a]
        K[a] = k


@njit(cache=True)
def damping(K, masses, D):
    for a in range(4):
        D[a] = 2.0 * math.sqrt(K[a] * masses[a])


@njit(cache=True)
def run_phase(X, V, S, K, D, objs, door, W, C, grid, SM, IS, T,
              target, ctl, adaptive, energy_mode, max_ticks, tol, stop_on_reach, settle_speed,
              cstate, trace, row0):
    """Run up to max_ticks control ticks toward ``target``.

    ctl: beta, gamma_e, max_step, max_yaw_step, kmin[4], kmax[4], masses[4].
    cstate: eps[4], power, energy, max contact force, force-excess integral.
    With settle_speed > 0 the phase also ends (status 2) once the setpoint sits
    on the target and the ee has come to rest, e.g. when blocked by contact.
    Returns (ticks, status) with status 1 reached, 0 budget, -1 diverged.
    """
    beta = ctl[0]
    gamma_e = ctl[1]
    max_step = ctl[2]
    max_yaw = ctl[3]
    kmin = ctl[4:8]
    kmax = ctl[8:12]
    masses = ctl[12:16]
    tel = np.zeros(NF_TEL)
    eps = cstate[0:4]
    n = 0
    while n < max_ticks:
        at_target = interpolate(S, target, max_step, max_yaw)
        if adaptive:
            drive = cstate[5] if energy_mode else cstate[4]
            adapt(K, eps, drive, beta, gamma_e, kmin, kmax, C[C_DT])
            damping(K, masses, D)
        ok = tick(X, V, S, K, D, objs, door, W, C, grid, SM, IS, T, tel)
        for a in range(4):
            cstate[a] = tel[T_EPS + a]
        cstate[4] = tel[T_POW]
        cstate[5] += tel[T_POW] * C[C_DT]
        cstate[6] = max(cstate[6], tel[T_FMAG])
        cstate[7] += tel[T_EXCESS] * C[C_DT]
        r = row0 + n
        if r < trace.shape[0]:
            tr = trace[r]
            tr[TR_TIME] = T[0]
            for a in range(3):
                tr[TR_POS + a] = X[a]
                tr[TR_FCON + a] = tel[T_FCON + a]
                tr[TR_VEL + a] = V[a]
            tr[TR_YAW] = X[3]
            for a in range(4):
                tr[TR_SET + a] = S[a]
                tr[TR_K + a] = K[a]
                tr[TR_D + a] = D[a]
                tr[TR_FCMD + a] = tel[T_FCMD + a]
                tr[TR_EPS + a] = tel[T_EPS + a]
            tr[TR_POW] = tel[T_POW]
            tr[TR_NTAB] = tel[T_NTAB]
            tr[TR_EXCESS] = tel[T_EXCESS]
            tr[TR_FMAG] = tel[T_FMAG]
            tr[TR_CLEARED] = tel[T_CLEARED]
        n += 1
        if not ok:
            return n, -1
        if stop_on_reach:
            d2 = (X[0] - target[0]) ** 2 + (X[1] - target[1]) ** 2 + (X[2] - target[2]) ** 2
            if d2 < tol * tol:
                return n, 1
        if settle_speed > 0.0 and at_target:
            sp = math.sqrt(V[0] * V[0] + V[1] * V[1] + V[2] * V[2])
            if sp < settle_speed:
                return n, 2
    return n, 0
