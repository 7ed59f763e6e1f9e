#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "fft.hpp"
#include "tensor.hpp"

namespace frdiff {

/// Per-channel complex spectrum in the Tensor3 layout; DC sits at (0, 0).
template <typename T>
struct ComplexSpectrum {
    Tensor3<T> re;
    Tensor3<T> im;

    ComplexSpectrum() = default;
    ComplexSpectrum(int c, int h, int w) : re(c, h, w), im(c, h, w) {}

    int channels() const noexcept { return re.channels(); }
    int height() const noexcept { return re.height(); }
    int width() const noexcept { return re.width(); }
    std::complex<T> at(int c, int u, int v) const { return {re(c, u, v), im(c, u, v)}; }
};

/// Amplitude (>= 0) and phase (in (-pi, pi]) spectra.
template <typename T>
struct AmpPhase {
    Tensor3<T> amplitude;
    Tensor3<T> phase;
};

namespace detail {

template <typename T>
ComplexSpectrum<T> transform_planes(const Tensor3<T>& re, const Tensor3<T>* im, int sign, double scale) {
    ComplexSpectrum<T> out(re.channels(), re.height(), re.width());
    std::vector<fft::cplx> plane(re.plane());
    for (int c = 0; c < re.channels(); ++c) {
        for (std::size_t i = 0; i < re.plane(); ++i)
            plane[i] = {static_cast<double>(re.channel(c)[i]),
                        im ? static_cast<double>(im->channel(c)[i]) : 0.0};
        fft::transform2d(plane, re.height(), re.width(), sign);
        for (std::size_t i = 0; i < re.plane(); ++i) {
            out.re.channel(c)[i] = static_cast<T>(plane[i].real() * scale);
            out.im.channel(c)[i] = static_cast<T>(plane[i].imag() * scale);
        }
    }
    return out;
}

} // namespace detail

/// Index of the conjugate-mirror frequency (-u mod n).
inline int mirror(int u, int n) { return u == 0 ? 0 : n - u; }

/// Unnormalized forward 2-D DFT, applied independently per channel.
/// Self-mirrored bins (DC, Nyquist) of a real input are exactly real; their rounding
/// residue is cleared so the phase there is exactly 0 or pi.
template <typename T>
ComplexSpectrum<T> dft2(const Tensor3<T>& x) {
    ComplexSpectrum<T> s = detail::transform_planes<T>(x, nullptr, -1, 1.0);
    const int h = x.height(), w = x.width();
    for (int c = 0; c < x.channels(); ++c)
        for (int u : {0, h / 2})
            for (int v : {0, w / 2})
                if (u < h && v < w && mirror(u, h) == u && mirror(v, w) == v) s.im(c, u, v) = T(0);
    return s;
}

/// Forward DFT of a complex-valued field (used by backward passes).
template <typename T>
ComplexSpectrum<T> dft2(const ComplexSpectrum<T>& s) {
    return detail::transform_planes<T>(s.re, &s.im, -1, 1.0);
}

/// Inverse DFT with 1/(H*W) normalization, keeping both parts.
template <typename T>
ComplexSpectrum<T> idft2_complex(const ComplexSpectrum<T>& s) {
    if (s.re.plane() == 0) return s;
    return detail::transform_planes<T>(s.re, &s.im, +1, 1.0 / static_cast<double>(s.re.plane()));
}

template <typename T>
double l2_norm(const Tensor3<T>& t) {
    double s = 0.0;
    for (T v : t.values()) s += static_cast<double>(v) * v;
    return std::sqrt(s);
}

/// Inverse DFT returning the real part. The imaginary residue must be negligible:
/// anything above max(1e-5, 1e-3 * ||real||) means the spectrum was not conjugate
/// symmetric and is rejected.
template <typename T>
Tensor3<T> idft2(const ComplexSpectrum<T>& s) {
    if (!s.re.same_shape(s.im)) throw ShapeError("idft2: re/im shape mismatch");
    ComplexSpectrum<T> full = idft2_complex(s);
    const double residue = l2_norm(full.im);
    const double signal = l2_norm(full.re);
    if (residue > std::max(1e-5, 1e-3 * signal))
        throw NumericError(concat("idft2: imaginary residue ", residue, " exceeds tolerance (signal norm ",
                                  signal, "); spectrum is not conjugate symmetric"));
    return std::move(full.re);
}

/// Projects a spectrum onto its conjugate-symmetric part, (S(k) + conj S(-k)) / 2.
/// The inverse transform of the result is the real part of the inverse of `s`.
/// Returns the L2 norm of the removed antisymmetric part in the spatial domain.
template <typename T>
double symmetrize(ComplexSpectrum<T>& s) {
    const int h = s.height(), w = s.width();
    double removed = 0.0;
    ComplexSpectrum<T> out(s.channels(), h, w);
    for (int c = 0; c < s.channels(); ++c)
        for (int u = 0; u < h; ++u)
            for (int v = 0; v < w; ++v) {
                const int mu = mirror(u, h), mv = mirror(v, w);
                const double ar = s.re(c, u, v), ai = s.im(c, u, v);
                const double br = s.re(c, mu, mv), bi = -static_cast<double>(s.im(c, mu, mv));
                out.re(c, u, v) = static_cast<T>(0.5 * (ar + br));
                out.im(c, u, v) = static_cast<T>(0.5 * (ai + bi));
                const double dr = 0.5 * (ar - br), di = 0.5 * (ai - bi);
                removed += dr * dr + di * di;
            }
    s = std::move(out);
    return s.re.plane() ? std::sqrt(removed / static_cast<double>(s.re.plane())) : 0.0;
}

/// Max deviation from F[c,u,v] = conj(F[c,-u,-v]).
template <typename T>
double conjugate_symmetry_error(const ComplexSpectrum<T>& s) {
    double err = 0.0;
    const int h = s.height(), w = s.width();
    for (int c = 0; c < s.channels(); ++c)
        for (int u = 0; u < h; ++u)
            for (int v = 0; v < w; ++v) {
                const int mu = mirror(u, h), mv = mirror(v, w);
                err = std::max(err, std::abs(static_cast<double>(s.re(c, u, v)) - s.re(c, mu, mv)));
                err = std::max(err, std::abs(static_cast<double>(s.im(c, u, v)) + s.im(c, mu, mv)));
            }
    return err;
}

/// amplitude = |F|, phase = atan2(im, re); a zero bin gets phase 0.
template <typename T>
AmpPhase<T> decompose(const ComplexSpectrum<T>& s) {
    AmpPhase<T> ap{Tensor3<T>(s.channels(), s.height(), s.width()),
                   Tensor3<T>(s.channels(), s.height(), s.width())};
    for (std::size_t i = 0; i < s.re.size(); ++i) {
        const T r = s.re[i], m = s.im[i];
        ap.amplitude[i] = std::hypot(r, m);
        ap.phase[i] = (r == T(0) && m == T(0)) ? T(0) : std::atan2(m, r);
    }
    return ap;
}

template <typename T>
ComplexSpectrum<T> recompose(const AmpPhase<T>& ap) {
    ap.amplitude.require_same(ap.phase, "recompose");
    ComplexSpectrum<T> s(ap.amplitude.channels(), ap.amplitude.height(), ap.amplitude.width());
    for (std::size_t i = 0; i < ap.amplitude.size(); ++i) {
        const T a = ap.amplitude[i];
        if (!std::isfinite(a))
            throw NumericError(concat("recompose: non-finite amplitude ", a, " at flat index ", i));
        if (a < T(0))
            throw DataError(concat("recompose: negative amplitude ", a, " at flat index ", i));
        s.re[i] = a * std::cos(ap.phase[i]);
        s.im[i] = a * std::sin(ap.phase[i]);
    }
    return s;
}

template <typename T>
AmpPhase<T> amp_phase(const Tensor3<T>& x) {
    return decompose(dft2(x));
}

/// Recombines the donor's amplitude spectrum with the content's phase spectrum.
/// With content = hazy and donor = clear this yields a "SynClear" image.
template <typename T>
Tensor3<T> swap_amplitude(const Tensor3<T>& content, const Tensor3<T>& amplitude_donor) {
    if (!content.same_shape(amplitude_donor))
        throw ShapeError(concat("swap_amplitude: content ", content.shape_str(), " vs donor ",
                                amplitude_donor.shape_str()));
    AmpPhase<T> c = amp_phase(content);
    AmpPhase<T> d = amp_phase(amplitude_donor);
    ComplexSpectrum<T> mixed = recompose(AmpPhase<T>{std::move(d.amplitude), std::move(c.phase)});
    // Donor amplitude is even and content phase is odd for real inputs, except at
    // self-mirrored bins where phase may be pi; projecting keeps the result real.
    symmetrize(mixed);
    return idft2(mixed);
}

} // namespace frdiff
