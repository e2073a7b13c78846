"""
Auditing the performance-difference bounds
==========================================

Draws random (model, old policy, new policy) triples, evaluates every bound
exactly and compares it with the true return difference. At lam = 0 the
sandwich always holds. For lam > 0 it does not, and the missing piece is a
single term that the bound drops: the difference between rolling the
expected TD error forward under the new policy and under the old one.
"""


from cuprl.audit import AuditReport, audit_draw, draw_instance
from cuprl.bounds import theorem1_bounds

sizes, lambdas = ((3, 2), (5, 3), (8, 3)), (0.0, 0.5, 0.95)

# %% Tally violations per lambda on a 200-draw corpus
per_lam = {lam: AuditReport() for lam in lambdas}
for i in range(200):
    d = draw_instance(42, i, sizes, lambdas)
    audit_draw(d, per_lam[d.lam])

for lam, rep in per_lam.items():
    print(f"lam={lam}")
    for name, t in sorted(rep.by_variant.items()):
        print(f"   {name:15s} draws={t.draws:3d} violations={t.violations:3d} worst margin={t.worst_margin: .3g}")

# %% Look at one violating draw in detail
for i in range(200):
    d = draw_instance(42, i, sizes, lambdas)
    r = theorem1_bounds(d.model, d.pi_new, d.pi_old, d.phi, d.lam)
    if not r.certified():
        break

centre = 0.5 * (r.lower + r.upper)
print(f"\ndraw {i}: S={d.model.n_states}, lam={d.lam}")
print(f"   actual J(new) - J(old) = {r.actual_diff: .5f}")
print(f"   bound interval         = [{r.lower: .5f}, {r.upper: .5f}]")
print(f"   interval centre        = {centre: .5f}")
print(f"   dropped shift term     = {r.state_shift_term: .5f}")
print(f"   centre + shift         = {centre + r.state_shift_term: .5f}  (the rest is covered by the slack)")

# %% The same draw at lam = 0: the shift term vanishes and the bound holds
r0 = theorem1_bounds(d.model, d.pi_new, d.pi_old, d.phi, 0.0)
print(f"\nlam=0: actual {r0.actual_diff: .5f} in [{r0.lower: .5f}, {r0.upper: .5f}], shift {r0.state_shift_term}")
