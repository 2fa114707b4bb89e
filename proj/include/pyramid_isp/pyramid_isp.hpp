#pragma once

#include "pyramid_isp/bayer.hpp"
#include "pyramid_isp/checkpoint.hpp"
#include "pyramid_isp/dataset.hpp"
#include "pyramid_isp/errors.hpp"
#include "pyramid_isp/image.hpp"
#include "pyramid_isp/inference.hpp"
#include "pyramid_isp/losses.hpp"
#include "pyramid_isp/metrics.hpp"
#include "pyramid_isp/model.hpp"
#include "pyramid_isp/optimizer.hpp"
#include "pyramid_isp/png_io.hpp"
#include "pyramid_isp/report.hpp"
#include "pyramid_isp/run_config.hpp"
#include "pyramid_isp/schedule.hpp"
#include "pyramid_isp/synthetic.hpp"
#include "pyramid_isp/trainer.hpp"
