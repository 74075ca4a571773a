#include "trisplat/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "trisplat/error.hpp"
#include "trisplat/parallel.hpp"

namespace trisplat {

namespace {

void require_same_shape(const Image& a, const Image& b) {
    if (!a.same_shape(b)) fail(ErrorCode::ShapeMismatch, "images differ in shape");
}

std::array<double, kSsimWindow> gaussian_window() {
    std::array<double, kSsimWindow> g{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - kSsimWindow / 2;
        g[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
        sum += g[i];
    }
    for (double& v : g) v /= sum;
    return g;
}

// Separable 'valid' Gaussian filter: (w x h) -> (w - 10) x (h - 10).
std::vector<double> filter_valid(const std::vector<double>& in, int w, int h,
                                 const std::array<double, kSsimWindow>& g) {
    const int ow = w - kSsimWindow + 1;
    const int oh = h - kSsimWindow + 1;
    std::vector<double> tmp(static_cast<std::size_t>(ow) * h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) s += g[k] * in[y * w + x + k];
            tmp[y * ow + x] = s;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(ow) * oh);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) s += g[k] * tmp[(y + k) * ow + x];
            out[y * ow + x] = s;
        }
    }
    return out;
}

// Adjoint of filter_valid.
std::vector<double> filter_valid_adjoint(const std::vector<double>& grad, int w, int h,
                                         const std::array<double, kSsimWindow>& g) {
    const int ow = w - kSsimWindow + 1;
    const int oh = h - kSsimWindow + 1;
    std::vector<double> tmp(static_cast<std::size_t>(ow) * h, 0.0);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            const double v = grad[y * ow + x];
            for (int k = 0; k < kSsimWindow; ++k) tmp[(y + k) * ow + x] += g[k] * v;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(w) * h, 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            const double v = tmp[y * ow + x];
            for (int k = 0; k < kSsimWindow; ++k) out[y * w + x + k] += g[k] * v;
        }
    }
    return out;
}

std::vector<double> channel_plane(const Image& img, int c) {
    std::vector<double> plane(img.pixel_count());
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = img.data[i * 3 + c];
    return plane;
}

LossValue<Image> ssim_impl(const Image& x_img, const Image& y_img, bool with_grad) {
    require_same_shape(x_img, y_img);
    if (std::min(x_img.width, x_img.height) < kSsimWindow) fail(ErrorCode::TooSmall, "SSIM needs images >= 11 px");

    const auto g = gaussian_window();
    const int w = x_img.width;
    const int h = x_img.height;
    const double c1 = (kSsimK1 * 1.0) * (kSsimK1 * 1.0);
    const double c2 = (kSsimK2 * 1.0) * (kSsimK2 * 1.0);
    const std::size_t positions = static_cast<std::size_t>(w - kSsimWindow + 1) * (h - kSsimWindow + 1);
    const double scale = 1.0 / (3.0 * static_cast<double>(positions));

    LossValue<Image> result;
    if (with_grad) result.grad = Image(w, h);
    std::vector<double> channel_sums(3);

    for (int c = 0; c < 3; ++c) {
        const auto x = channel_plane(x_img, c);
        const auto y = channel_plane(y_img, c);
        std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mu_x = filter_valid(x, w, h, g);
        const auto mu_y = filter_valid(y, w, h, g);
        const auto e_xx = filter_valid(xx, w, h, g);
        const auto e_yy = filter_valid(yy, w, h, g);
        const auto e_xy = filter_valid(xy, w, h, g);

        std::vector<double> map(positions);
        std::vector<double> d_mu(positions), d_exx(positions), d_exy(positions);
        for (std::size_t p = 0; p < positions; ++p) {
            const double mx = mu_x[p], my = mu_y[p];
            const double sxx = e_xx[p] - mx * mx;
            const double syy = e_yy[p] - my * my;
            const double sxy = e_xy[p] - mx * my;
            const double a1 = 2.0 * mx * my + c1;
            const double a2 = 2.0 * sxy + c2;
            const double b1 = mx * mx + my * my + c1;
            const double b2 = sxx + syy + c2;
            const double s = a1 * a2 / (b1 * b2);
            map[p] = s;
            if (!with_grad) continue;
            const double ds_dmu = 2.0 * my * a2 / (b1 * b2) - s * 2.0 * mx / b1;
            const double ds_dsxx = -s / b2;
            const double ds_dsxy = 2.0 * a1 / (b1 * b2);
            d_exx[p] = ds_dsxx * scale;
            d_exy[p] = ds_dsxy * scale;
            d_mu[p] = (ds_dmu - 2.0 * mx * ds_dsxx - my * ds_dsxy) * scale;
        }
        channel_sums[c] = pairwise_sum(map);

        if (with_grad) {
            const auto g_mu = filter_valid_adjoint(d_mu, w, h, g);
            const auto g_xx = filter_valid_adjoint(d_exx, w, h, g);
            const auto g_xy = filter_valid_adjoint(d_exy, w, h, g);
            for (std::size_t i = 0; i < x.size(); ++i) {
                result.grad.data[i * 3 + c] = g_mu[i] + 2.0 * x[i] * g_xx[i] + y[i] * g_xy[i];
            }
        }
    }
    result.value = (channel_sums[0] + channel_sums[1] + channel_sums[2]) * scale;
    return result;
}

}  // namespace

LossValue<Image> l1_loss(const Image& rendered, const Image& gt) {
    require_same_shape(rendered, gt);
    LossValue<Image> out;
    out.grad = Image(rendered.width, rendered.height);
    const std::size_t count = rendered.data.size();
    std::vector<double> diffs(count);
    const double inv = count ? 1.0 / static_cast<double>(count) : 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double d = rendered.data[i] - gt.data[i];
        diffs[i] = std::abs(d);
        out.grad.data[i] = d > 0.0 ? inv : (d < 0.0 ? -inv : 0.0);
    }
    out.value = pairwise_sum(diffs) * inv;
    return out;
}

LossValue<Image> ssim(const Image& rendered, const Image& gt) { return ssim_impl(rendered, gt, true); }

double ssim_value(const Image& rendered, const Image& gt) { return ssim_impl(rendered, gt, false).value; }

double psnr(const Image& rendered, const Image& gt) {
    require_same_shape(rendered, gt);
    std::vector<double> sq(rendered.data.size());
    for (std::size_t i = 0; i < sq.size(); ++i) {
        const double d = rendered.data[i] - gt.data[i];
        sq[i] = d * d;
    }
    const double mse = sq.empty() ? 0.0 : pairwise_sum(sq) / static_cast<double>(sq.size());
    if (mse < 1e-12) return kPsnrCap;
    return 10.0 * std::log10(1.0 / mse);
}

LossValue<ScalarMap> depth_smoothness(const ScalarMap& depth, const Image& gt) {
    if (depth.width != gt.width || depth.height != gt.height) {
        fail(ErrorCode::ShapeMismatch, "depth and image resolution differ");
    }
    const int w = depth.width;
    const int h = depth.height;
    LossValue<ScalarMap> out;
    out.grad = ScalarMap(w, h);
    if (w < 2 || h < 2) return out;

    const double inv = 1.0 / (static_cast<double>(w - 1) * (h - 1));
    std::vector<double> terms;
    terms.reserve(static_cast<std::size_t>(w - 1) * (h - 1));
    auto image_grad = [&](int x0, int y0, int x1, int y1) {
        double s = 0.0;
        for (int c = 0; c < 3; ++c) s += std::abs(gt.at(x1, y1, c) - gt.at(x0, y0, c));
        return s / 3.0;
    };
    auto sign = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
    for (int y = 0; y < h - 1; ++y) {
        for (int x = 0; x < w - 1; ++x) {
            const double dx = depth.at(x + 1, y) - depth.at(x, y);
            const double dy = depth.at(x, y + 1) - depth.at(x, y);
            const double wx = std::exp(-image_grad(x, y, x + 1, y));
            const double wy = std::exp(-image_grad(x, y, x, y + 1));
            terms.push_back(std::abs(dx) * wx + std::abs(dy) * wy);
            const double gx = sign(dx) * wx * inv;
            const double gy = sign(dy) * wy * inv;
            out.grad.at(x + 1, y) += gx;
            out.grad.at(x, y + 1) += gy;
            out.grad.at(x, y) -= gx + gy;
        }
    }
    out.value = pairwise_sum(terms) * inv;
    return out;
}

ScalarMap upsample_nearest(const ScalarMap& depth, int factor) {
    require(factor >= 1, ErrorCode::InvalidArgument, "upsample factor must be >= 1");
    ScalarMap out(depth.width * factor, depth.height * factor);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) out.at(x, y) = depth.at(x / factor, y / factor);
    }
    return out;
}

ScalarMap upsample_nearest_backward(const ScalarMap& grad, int factor) {
    require(factor >= 1 && grad.width % factor == 0 && grad.height % factor == 0, ErrorCode::ShapeMismatch,
            "gradient is not an integer upsample");
    ScalarMap out(grad.width / factor, grad.height / factor);
    for (int y = 0; y < grad.height; ++y) {
        for (int x = 0; x < grad.width; ++x) out.at(x / factor, y / factor) += grad.at(x, y);
    }
    return out;
}

namespace {

// Indices in ascending (value, index) order for one coordinate.
std::vector<std::size_t> sorted_order(const PointCloud& x, int axis) {
    std::vector<std::size_t> order(x.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return x[a][axis] < x[b][axis] || (x[a][axis] == x[b][axis] && a < b);
    });
    return order;
}

struct QuantileRank {
    std::size_t lo = 0, hi = 0;
    double frac = 0.0;
};

QuantileRank quantile_rank(std::size_t m, double alpha) {
    const double rank = alpha * static_cast<double>(m - 1);
    QuantileRank r;
    r.lo = std::min(static_cast<std::size_t>(std::floor(rank)), m - 1);
    r.hi = std::min(r.lo + 1, m - 1);
    r.frac = rank - static_cast<double>(r.lo);
    return r;
}

// Median as the (one or two) contributing indices per axis.
struct MedianIndex {
    std::array<std::size_t, 2> idx{};
    int count = 1;
};

struct Normalization {
    Vec3 median = Vec3::Zero();
    std::array<MedianIndex, 3> median_index;
    std::vector<double> norms;
    std::vector<std::size_t> norm_order;
    QuantileRank rank;
    double scale = 0.0;
};

Normalization analyze(const PointCloud& x, double alpha) {
    const std::size_t m = x.size();
    if (m < 2) fail(ErrorCode::DegenerateCloud, "need at least two points");
    require(alpha > 0.0 && alpha <= 1.0, ErrorCode::InvalidArgument, "alpha must lie in (0, 1]");

    Normalization n;
    for (int axis = 0; axis < 3; ++axis) {
        const auto order = sorted_order(x, axis);
        MedianIndex& mi = n.median_index[axis];
        if (m % 2 == 1) {
            mi.idx = {order[m / 2], order[m / 2]};
            mi.count = 1;
            n.median[axis] = x[mi.idx[0]][axis];
        } else {
            mi.idx = {order[m / 2 - 1], order[m / 2]};
            mi.count = 2;
            n.median[axis] = 0.5 * (x[mi.idx[0]][axis] + x[mi.idx[1]][axis]);
        }
    }
    n.norms.resize(m);
    for (std::size_t i = 0; i < m; ++i) n.norms[i] = (x[i] - n.median).norm();
    n.norm_order.resize(m);
    std::iota(n.norm_order.begin(), n.norm_order.end(), 0);
    std::sort(n.norm_order.begin(), n.norm_order.end(), [&](std::size_t a, std::size_t b) {
        return n.norms[a] < n.norms[b] || (n.norms[a] == n.norms[b] && a < b);
    });
    n.rank = quantile_rank(m, alpha);
    const double lo = n.norms[n.norm_order[n.rank.lo]];
    const double hi = n.norms[n.norm_order[n.rank.hi]];
    n.scale = lo + n.rank.frac * (hi - lo);
    if (!(n.scale >= 1e-12)) fail(ErrorCode::DegenerateCloud, "cloud scale below 1e-12");
    return n;
}

}  // namespace

double quantile(std::vector<double> values, double alpha) {
    require(!values.empty(), ErrorCode::InvalidArgument, "quantile of an empty set");
    std::sort(values.begin(), values.end());
    const auto r = quantile_rank(values.size(), alpha);
    return values[r.lo] + r.frac * (values[r.hi] - values[r.lo]);
}

Vec3 coordinate_median(const PointCloud& x) {
    require(!x.empty(), ErrorCode::InvalidArgument, "median of an empty cloud");
    Vec3 med;
    const std::size_t m = x.size();
    for (int axis = 0; axis < 3; ++axis) {
        const auto order = sorted_order(x, axis);
        med[axis] = m % 2 == 1 ? x[order[m / 2]][axis] : 0.5 * (x[order[m / 2 - 1]][axis] + x[order[m / 2]][axis]);
    }
    return med;
}

PointCloud robust_normalize(const PointCloud& x, double alpha) {
    const Normalization n = analyze(x, alpha);
    PointCloud out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - n.median) / n.scale;
    return out;
}

LossValue<std::vector<Vec3>> point_loss(const PointCloud& v, const PointCloud& p, double alpha) {
    if (v.size() != p.size()) fail(ErrorCode::SizeMismatch, "point clouds differ in size");
    const Normalization nv = analyze(v, alpha);
    const PointCloud np = robust_normalize(p, alpha);
    const std::size_t m = v.size();
    const double inv_m = 1.0 / static_cast<double>(m);

    LossValue<std::vector<Vec3>> out;
    out.grad.assign(m, Vec3::Zero());
    std::vector<double> sq(m);
    Vec3 d_median = Vec3::Zero();
    double d_scale = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const Vec3 ni = (v[i] - nv.median) / nv.scale;
        const Vec3 diff = ni - np[i];
        sq[i] = diff.squaredNorm();
        const Vec3 g = 2.0 * diff * inv_m;
        out.grad[i] += g / nv.scale;
        d_median -= g / nv.scale;
        d_scale -= g.dot(ni) / nv.scale;
    }
    out.value = pairwise_sum(sq) * inv_m;

    // scale = r_lo + frac (r_hi - r_lo), r_i = |v_i - median|
    auto push_norm = [&](std::size_t i, double d_norm) {
        if (d_norm == 0.0 || nv.norms[i] == 0.0) return;
        const Vec3 u = (v[i] - nv.median) / nv.norms[i];
        out.grad[i] += d_norm * u;
        d_median -= d_norm * u;
    };
    push_norm(nv.norm_order[nv.rank.lo], d_scale * (1.0 - nv.rank.frac));
    push_norm(nv.norm_order[nv.rank.hi], d_scale * nv.rank.frac);

    for (int axis = 0; axis < 3; ++axis) {
        const auto& mi = nv.median_index[axis];
        if (mi.count == 1) {
            out.grad[mi.idx[0]][axis] += d_median[axis];
        } else {
            out.grad[mi.idx[0]][axis] += 0.5 * d_median[axis];
            out.grad[mi.idx[1]][axis] += 0.5 * d_median[axis];
        }
    }
    return out;
}

TotalLoss total_loss(const Image& rendered, const Image& gt, const ScalarMap& d_render, const PointCloud* v,
                     const PointCloud* p, const LossWeights& weights, double alpha) {
    require(weights.perceptual >= 0.0 && weights.ds >= 0.0 && weights.points >= 0.0, ErrorCode::InvalidArgument,
            "loss weights must be non-negative");
    TotalLoss out;
    LossReport& r = out.report;
    r.weights = weights;

    auto l1 = l1_loss(rendered, gt);
    r.l1 = l1.value;
    out.grad_rendered = std::move(l1.grad);

    if (weights.perceptual > 0.0) {
        const auto s = ssim(rendered, gt);
        r.perceptual = 1.0 - s.value;
        for (std::size_t i = 0; i < out.grad_rendered.data.size(); ++i) {
            out.grad_rendered.data[i] -= weights.perceptual * s.grad.data[i];
        }
    } else {
        r.perceptual = 1.0 - ssim_value(rendered, gt);
    }

    auto ds = depth_smoothness(d_render, gt);
    r.ds = ds.value;
    out.grad_depth = std::move(ds.grad);
    for (double& g : out.grad_depth.data) g *= weights.ds;

    if (weights.points > 0.0 && v != nullptr && p != nullptr) {
        auto pl = point_loss(*v, *p, alpha);
        r.points = pl.value;
        out.grad_points = std::move(pl.grad);
        for (Vec3& g : out.grad_points) g *= weights.points;
    }

    r.total = r.l1 + weights.perceptual * r.perceptual + weights.ds * r.ds + weights.points * r.points;
    if (!std::isfinite(r.total)) fail(ErrorCode::NonFiniteLoss, "total loss is not finite");
    return out;
}

std::string loss_report_json(long step, const LossReport& report) {
    nlohmann::json j;
    j["step"] = step;
    j["l1"] = report.l1;
    j["perceptual"] = report.perceptual;
    j["ds"] = report.ds;
    j["points"] = report.points;
    j["total"] = report.total;
    j["lambda_points"] = report.weights.points;
    return j.dump();
}

}  // namespace trisplat
