"""Independent high-precision reference values for the unit tests.

Everything here is computed with mpmath at 40 significant digits straight
from the closed forms; nothing is imported from the C++ code.  Run with
`python3 tests/oracles/derive.py` to regenerate the table.
"""

import mpmath as mp

mp.mp.dps = 40


def Phi(z):
    return mp.ncdf(z)


def phi(z):
    return mp.npdf(z)


def link(theta, x):
    j = len(x)
    a, b = theta[:j], theta[j:]
    mu = mp.fsum(ai * xi for ai, xi in zip(a, x))
    sigma = mp.e ** mp.fsum(bi * xi for bi, xi in zip(b, x))
    return mu, sigma


def F(theta, x, tau):
    mu, sigma = link(theta, x)
    return Phi((mp.log(tau) - mu) / sigma)


def mean_life(theta, x):
    mu, sigma = link(theta, x)
    return mp.e ** (mu + sigma**2 / 2)


def chisq_upper_quantile(alpha, r):
    return mp.findroot(lambda q: mp.gammainc(mp.mpf(r) / 2, q / 2, mp.inf, regularized=True) - alpha, r + 1)


def show(name, value):
    print(f"{name:<40} {mp.nstr(value, 17)}")


show("pdf(0)", phi(0))
show("pdf(1)", phi(1))
show("cdf(3)", Phi(3))
show("cdf(-0.54764)", Phi(mp.mpf("-0.54764")))
show("cdf(-8)", Phi(-8))
show("quantile(0.95)", mp.sqrt(2) * mp.erfinv(2 * mp.mpf("0.95") - 1))
show("quantile(0.975)", mp.sqrt(2) * mp.erfinv(2 * mp.mpf("0.975") - 1))
show("quantile(1e-10)", mp.sqrt(2) * mp.erfinv(2 * mp.mpf("1e-10") - 1))
show("chisq_q(0.05,2)", chisq_upper_quantile(mp.mpf("0.05"), 2))
show("chisq_q(0.05,1)", chisq_upper_quantile(mp.mpf("0.05"), 1))
show("chisq_q(0.01,5)", chisq_upper_quantile(mp.mpf("0.01"), 5))
show("chisq_sf(7.5,3)", mp.gammainc(mp.mpf(3) / 2, mp.mpf("7.5") / 2, mp.inf, regularized=True))
show("chisq_sf(40,6)", mp.gammainc(3, 20, mp.inf, regularized=True))

moderate = [mp.mpf(6), mp.mpf("-0.1"), mp.mpf("-0.6"), mp.mpf("0.02")]
low = [mp.mpf("5.8")] + moderate[1:]
high = [mp.mpf("6.2")] + moderate[1:]
for label, th in (("low", low), ("moderate", moderate), ("high", high)):
    show(f"R(t=60,x=15) {label}", 1 - F(th, [1, 15], 60))
    show(f"E(x=15) {label}", mean_life(th, [1, 15]))
mu, sigma = link(moderate, [1, 15])
show("moderate mu(x=15)", mu)
show("moderate sigma(x=15)", sigma)

electro = [mp.mpf(s) for s in ("4.78801", "-0.04305", "0.80430", "-0.01833")]
mu, sigma = link(electro, [1, 25])
show("electro mu(25)", mu)
show("electro sigma(25)", sigma)
show("electro R(t=10,x=25)", 1 - F(electro, [1, 25], 10))
show("electro E(25)", mean_life(electro, [1, 25]))
electric = [mp.mpf(s) for s in ("6.91992", "-0.03979", "-0.03734", "-1.84593", "0.01003", "0.01354")]
show("electric R(t=60,x=(25,35))", 1 - F(electric, [1, 25, 35], 60))
show("electric E(25,35)", mean_life(electric, [1, 25, 35]))

# hazard at the median of the standard lognormal
show("hazard(mu=0,sigma=1,t=1)", phi(0) / (1 * mp.mpf("0.5")))
t = mp.mpf(2)
pdf = phi(mp.log(t)) / t
show("hazard(mu=0,sigma=1,t=2)", pdf / (1 - Phi(mp.log(t))))

# objectives, single group of 10 devices
show("nll K=10 n=5 F=0.5", -10 * mp.log(mp.mpf("0.5")))
show("nll K=10 n=0 F=0.3", -10 * mp.log(mp.mpf("0.7")))
show("kl K=10 n=3 F=0.5", mp.mpf("0.3") * mp.log(mp.mpf("0.6")) + mp.mpf("0.7") * mp.log(mp.mpf("1.4")))
f, r, p1, p2, beta = mp.mpf("0.3"), mp.mpf("0.7"), mp.mpf("0.4"), mp.mpf("0.6"), mp.mpf("0.5")
show("dpd F=0.3 phat=0.4 beta=0.5",
     f ** (beta + 1) + r ** (beta + 1) - (beta + 1) / beta * (p1 * f**beta + p2 * r**beta))

# intervals
z90 = mp.sqrt(2) * mp.erfinv(mp.mpf("0.9"))
S = mp.e ** (z90 * mp.mpf("0.1") / (mp.mpf("0.5") * mp.mpf("0.5")))
show("logit lower", mp.mpf("0.5") / (mp.mpf("0.5") + mp.mpf("0.5") * S))
show("logit upper", mp.mpf("0.5") / (mp.mpf("0.5") + mp.mpf("0.5") / S))
R = mp.mpf("0.5")
fh = mp.log((1 + mp.sqrt(1 - R**2)) / R)
sef = mp.mpf("0.1") / (R * mp.sqrt(1 - R**2))
show("arsech lower", mp.sech(fh + z90 * sef))
show("arsech upper", mp.sech(fh - z90 * sef))
show("log-mean lower", 100 * mp.e ** (-z90 * 30 / 100))
show("log-mean upper", 100 * mp.e ** (z90 * 30 / 100))
show("asy z(0.95)", mp.sqrt(2) * mp.erfinv(mp.mpf("0.95")))

# h factors at omega = mu + sigma, theta = (1, 0, 0, 0), x = 1
z = mp.mpf(1)
for beta in (mp.mpf(0), mp.mpf("0.4")):
    w = Phi(z) ** (beta - 1) + (1 - Phi(z)) ** (beta - 1)
    show(f"h1(omega=2) beta={beta}", phi(z) * w)
    show(f"h2(omega=2) beta={beta}", z * phi(z) * w)
